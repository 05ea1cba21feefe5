//! ZTF tensor archives.
//!
//! ```text
//! 0..4        magic "ZTF1"
//! 4..12       u64 LE header length H
//! 12..12+H    UTF-8 JSON: name -> {"dtype":"f32","shape":[r,c],"offset":o,"len":l}
//! 12+H..      payload, row-major little-endian f32 per tensor
//! ```
//!
//! Offsets are relative to the payload start. The writer sorts names
//! lexicographically and packs tensors back to back, so equal maps always
//! produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zprune_core::Matrix;

use crate::error::{Result, ZpruneError};

pub const MAGIC: &[u8; 4] = b"ZTF1";
const PREAMBLE: usize = 12;

pub type TensorMap = BTreeMap<String, Matrix>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryInfo {
    pub dtype: String,
    pub shape: Vec<u64>,
    pub offset: u64,
    pub len: u64,
}

/// A parsed archive: header entries plus the raw payload bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub entries: BTreeMap<String, EntryInfo>,
    pub payload: Vec<u8>,
}

impl TensorArchive {
    pub fn from_tensors(tensors: &TensorMap) -> Result<Self> {
        if tensors.is_empty() {
            return Err(ZpruneError::InvalidArchive("archive must hold at least one tensor".into()));
        }
        let mut entries = BTreeMap::new();
        let total: usize = tensors.values().map(|m| m.len() * 4).sum();
        let mut payload = Vec::with_capacity(total);
        for (name, m) in tensors {
            let offset = payload.len() as u64;
            for v in m.as_slice() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.insert(
                name.clone(),
                EntryInfo {
                    dtype: "f32".into(),
                    shape: vec![m.rows() as u64, m.cols() as u64],
                    offset,
                    len: payload.len() as u64 - offset,
                },
            );
        }
        Ok(Self { entries, payload })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.entries).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| ZpruneError::Format(m);
        if bytes.len() < PREAMBLE {
            return Err(fmt(format!("file of {} bytes is shorter than the preamble", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic, expected \"ZTF1\"".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fmt(format!("header length {header_len} exceeds file size")))?;
        let header = std::str::from_utf8(&bytes[PREAMBLE..header_end])
            .map_err(|e| fmt(format!("header is not UTF-8: {e}")))?;
        let entries: BTreeMap<String, EntryInfo> =
            serde_json::from_str(header).map_err(|e| fmt(format!("header is not valid JSON: {e}")))?;
        let payload = bytes[header_end..].to_vec();

        let mut spans = Vec::with_capacity(entries.len());
        for (name, e) in &entries {
            if e.dtype != "f32" {
                return Err(fmt(format!("tensor `{name}` has unsupported dtype `{}`", e.dtype)));
            }
            let [r, c] = e.shape[..] else {
                return Err(fmt(format!("tensor `{name}` is not 2-D")));
            };
            if r == 0 || c == 0 {
                return Err(fmt(format!("tensor `{name}` has an empty dimension")));
            }
            let expected = r.checked_mul(c).and_then(|n| n.checked_mul(4));
            if expected != Some(e.len) {
                return Err(fmt(format!("tensor `{name}` declares {} bytes for shape {r}x{c}", e.len)));
            }
            let end = e
                .offset
                .checked_add(e.len)
                .ok_or_else(|| fmt(format!("tensor `{name}` offset overflows")))?;
            if end > payload.len() as u64 {
                return Err(fmt(format!(
                    "tensor `{name}` needs payload bytes {}..{end} but only {} are present",
                    e.offset,
                    payload.len()
                )));
            }
            spans.push((e.offset, end, name));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(fmt(format!("tensors `{}` and `{}` overlap", pair[0].2, pair[1].2)));
            }
        }
        Ok(Self { entries, payload })
    }

    pub fn tensors(&self) -> Result<TensorMap> {
        let mut out = TensorMap::new();
        for (name, e) in &self.entries {
            let bytes = &self.payload[e.offset as usize..(e.offset + e.len) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let m = Matrix::new(e.shape[0] as usize, e.shape[1] as usize, data)
                .map_err(|err| ZpruneError::Format(format!("tensor `{name}`: {err}")))?;
            out.insert(name.clone(), m);
        }
        Ok(out)
    }
}

pub fn encode_archive(tensors: &TensorMap) -> Result<Vec<u8>> {
    Ok(TensorArchive::from_tensors(tensors)?.to_bytes())
}

pub fn decode_archive(bytes: &[u8]) -> Result<TensorMap> {
    TensorArchive::from_bytes(bytes)?.tensors()
}

pub fn write_archive(tensors: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_archive(tensors)?;
    fs::write(path, bytes).map_err(|e| ZpruneError::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ZpruneError::io(path, e))?;
    decode_archive(&bytes)
}

/// Like [`read_archive`] but rejects any tensor holding NaN or infinity.
pub fn read_archive_finite(path: impl AsRef<Path>) -> Result<TensorMap> {
    let map = read_archive(path)?;
    if let Some((name, _)) = map.iter().find(|(_, m)| !m.is_finite()) {
        return Err(ZpruneError::NonFinite(name.clone()));
    }
    Ok(map)
}
