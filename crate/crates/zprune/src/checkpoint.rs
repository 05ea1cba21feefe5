//! Model checkpoints, their JSON manifests, and token corpora stored as ZTF.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zprune_core::model::{Token, ToyModel, ToyModelConfig};
use zprune_core::Matrix;

use crate::error::{Result, ZpruneError};
use crate::ztf::{self, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl From<ToyModelConfig> for ConfigRecord {
    fn from(c: ToyModelConfig) -> Self {
        Self {
            vocab_size: c.vocab_size,
            d_model: c.d_model,
            n_blocks: c.n_blocks,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            context_len: c.context_len,
            seed: c.seed,
        }
    }
}

impl From<ConfigRecord> for ToyModelConfig {
    fn from(c: ConfigRecord) -> Self {
        Self {
            vocab_size: c.vocab_size,
            d_model: c.d_model,
            n_blocks: c.n_blocks,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            context_len: c.context_len,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub final_lr_fraction: f32,
    pub clip_norm: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub seed: u64,
    pub length: usize,
    pub calib_sequences: usize,
    pub eval_tokens: usize,
}

/// Perplexities pinned for the default sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub mode: String,
    pub family: String,
    pub rhos: Vec<f64>,
    pub ppl: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub train: TrainRecord,
    pub corpus: CorpusRecord,
    pub untrained_ppl: f64,
    pub dense_ppl: f64,
    pub eval_stride: usize,
    pub sweep: SweepRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneProvenance {
    pub method: String,
    pub rho: f64,
    pub mode: String,
    pub family: String,
    pub calib_sequences: usize,
    pub source_sha256: String,
}

/// Sidecar JSON written next to every checkpoint (`model.ztf` -> `model.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub engine_version: String,
    pub config: ConfigRecord,
    pub checkpoint_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<FixtureRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruneProvenance>,
}

impl CheckpointManifest {
    pub fn new(config: ToyModelConfig) -> Self {
        Self {
            engine_version: zprune_core::ENGINE_VERSION.into(),
            config: config.into(),
            checkpoint_sha256: String::new(),
            fixture: None,
            pruning: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

pub fn model_tensors(model: &ToyModel) -> TensorMap {
    model
        .named_tensors()
        .into_iter()
        .map(|(name, m)| (name, m.clone()))
        .collect()
}

/// Encoded checkpoint bytes and their digest.
pub fn encode_checkpoint(model: &ToyModel) -> Result<(Vec<u8>, String)> {
    let bytes = ztf::encode_archive(&model_tensors(model))?;
    let hash = sha256_hex(&bytes);
    Ok((bytes, hash))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ZpruneError::io(path, e))
}

/// Writes `path` and its manifest sidecar; the manifest's hash field is
/// filled in from the written bytes. Returns the hash.
pub fn save_checkpoint(model: &ToyModel, path: &Path, manifest: &mut CheckpointManifest) -> Result<String> {
    let (bytes, hash) = encode_checkpoint(model)?;
    manifest.config = model.config.into();
    manifest.checkpoint_sha256 = hash.clone();
    write_file(path, &bytes)?;
    write_file(&manifest_path(path), manifest.to_json().as_bytes())?;
    Ok(hash)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let text = fs::read_to_string(path).map_err(|e| ZpruneError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ZpruneError::Manifest(format!("{}: {e}", path.display())))
}

pub fn model_from_tensors(config: ToyModelConfig, mut tensors: TensorMap) -> Result<ToyModel> {
    let mut missing = None;
    let model = ToyModel::from_named(config, |name| {
        let t = tensors.remove(name);
        if t.is_none() && missing.is_none() {
            missing = Some(name.to_string());
        }
        t
    });
    if let Some(name) = missing {
        return Err(ZpruneError::MissingTensor(name));
    }
    Ok(model?)
}

/// Loads a checkpoint and its sidecar manifest. Returns the model, the
/// manifest and the SHA-256 of the checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(ToyModel, CheckpointManifest, String)> {
    let manifest = read_manifest(&manifest_path(path))?;
    let bytes = fs::read(path).map_err(|e| ZpruneError::io(path, e))?;
    let hash = sha256_hex(&bytes);
    let tensors = ztf::decode_archive(&bytes)?;
    if let Some((name, _)) = tensors.iter().find(|(_, m)| !m.is_finite()) {
        return Err(ZpruneError::NonFinite(name.clone()));
    }
    let model = model_from_tensors(manifest.config.into(), tensors)?;
    Ok((model, manifest, hash))
}

pub const CALIB_ENTRY: &str = "calib";
pub const EVAL_ENTRY: &str = "eval";

// f32 represents every integer below 2^24 exactly
const MAX_TOKEN: f32 = 16_777_216.0;

pub fn tokens_to_matrix(tokens: &[Token], rows: usize) -> Result<Matrix> {
    if rows == 0 || !tokens.len().is_multiple_of(rows) {
        return Err(ZpruneError::Format(format!("{} tokens do not fill {rows} rows", tokens.len())));
    }
    Ok(Matrix::new(rows, tokens.len() / rows, tokens.iter().map(|&t| t as f32).collect())?)
}

pub fn matrix_to_tokens(m: &Matrix) -> Result<Vec<Token>> {
    m.as_slice()
        .iter()
        .map(|&v| {
            if (0.0..MAX_TOKEN).contains(&v) && v.fract() == 0.0 {
                Ok(v as Token)
            } else {
                Err(ZpruneError::Format(format!("{v} is not a token id")))
            }
        })
        .collect()
}

/// Writes calibration sequences (one per row) and an evaluation stream.
pub fn write_corpus(path: &Path, calib: &[Vec<Token>], eval: &[Token]) -> Result<()> {
    let flat: Vec<Token> = calib.concat();
    if calib.is_empty() || calib.iter().any(|s| s.len() != calib[0].len()) {
        return Err(ZpruneError::Format("calibration sequences must be non-empty and equal length".into()));
    }
    let mut map = TensorMap::new();
    map.insert(CALIB_ENTRY.into(), tokens_to_matrix(&flat, calib.len())?);
    map.insert(EVAL_ENTRY.into(), tokens_to_matrix(eval, 1)?);
    ztf::write_archive(&map, path)
}

pub fn read_calibration(path: &Path) -> Result<Vec<Vec<Token>>> {
    let map = ztf::read_archive(path)?;
    let m = map.get(CALIB_ENTRY).ok_or_else(|| ZpruneError::MissingTensor(CALIB_ENTRY.into()))?;
    let tokens = matrix_to_tokens(m)?;
    Ok(tokens.chunks_exact(m.cols()).map(<[Token]>::to_vec).collect())
}

pub fn read_eval_stream(path: &Path) -> Result<Vec<Token>> {
    let map = ztf::read_archive(path)?;
    let m = map.get(EVAL_ENTRY).ok_or_else(|| ZpruneError::MissingTensor(EVAL_ENTRY.into()))?;
    matrix_to_tokens(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ToyModelConfig {
        ToyModelConfig {
            vocab_size: 9,
            d_model: 4,
            n_blocks: 1,
            n_heads: 2,
            d_ff: 6,
            context_len: 5,
            seed: 1,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ztf");
        let model = ToyModel::init(tiny()).unwrap();
        let hash = save_checkpoint(&model, &path, &mut CheckpointManifest::new(tiny())).unwrap();
        let (loaded, manifest, loaded_hash) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(manifest.config, tiny().into());
        assert_eq!(hash, loaded_hash);
        assert_eq!(manifest.checkpoint_sha256, hash);
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ztf");
        ztf::write_archive(&model_tensors(&ToyModel::init(tiny()).unwrap()), &path).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ZpruneError::Io { .. })));
    }

    #[test]
    fn missing_tensor_is_named() {
        let mut t = model_tensors(&ToyModel::init(tiny()).unwrap());
        t.remove("blocks/0/mlp/up");
        let err = model_from_tensors(tiny(), t).unwrap_err();
        assert!(matches!(err, ZpruneError::MissingTensor(ref n) if n == "blocks/0/mlp/up"), "{err}");
    }

    #[test]
    fn token_matrix_checks() {
        let m = tokens_to_matrix(&[1, 2, 3, 4], 2).unwrap();
        assert_eq!(matrix_to_tokens(&m).unwrap(), vec![1, 2, 3, 4]);
        assert!(tokens_to_matrix(&[1, 2, 3], 2).is_err());
        let bad = Matrix::new(1, 2, vec![1.5, 2.0]).unwrap();
        assert!(matrix_to_tokens(&bad).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ztf");
        let calib = vec![vec![1, 2, 3], vec![4, 5, 6]];
        write_corpus(&path, &calib, &[7, 8, 9, 10]).unwrap();
        assert_eq!(read_calibration(&path).unwrap(), calib);
        assert_eq!(read_eval_stream(&path).unwrap(), vec![7, 8, 9, 10]);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
