//! Argument parsing and command execution for the `zprune` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use zprune_core::activation::{apply_activation_scaling, FeatureNormAccumulator, ModelFamily, ScalingParams};
use zprune_core::eval::{perplexity, SweepSpec, SweepTable};
use zprune_core::importance::{combined_importance, ImportanceConfig};
use zprune_core::model::{layer_id, LinearKind, Token, ToyModel, ToyModelConfig};
use zprune_core::pruning::{prune_model, zpruner_metric, Clock, Method, NoClock, PruneMode, PruneRequest};
use zprune_core::train::{train_toy_with, TrainConfig};
use zprune_core::{Error as EngineError, Matrix, ENGINE_VERSION};

use crate::checkpoint::{
    load_checkpoint, read_calibration, read_eval_stream, save_checkpoint, write_corpus, CheckpointManifest,
    CorpusRecord, FixtureRecord, PruneProvenance, SweepRecord, TrainRecord,
};
use crate::data::{synth_data, SynthData, CALIB_SEQUENCES, EVAL_TOKENS, SYNTH_LENGTH};
use crate::error::{Result, ZpruneError};
use crate::report::{render_layer_reports, render_report, Provenance, ReportFormat};
use crate::sweep::parallel_sweep;
use crate::ztf::{write_archive, TensorMap};

pub const SEED_ENV: &str = "ZPRUNE_SEED";
const DEFAULT_RHOS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "zprune", version, about = "Post-training pruning for toy transformer checkpoints")]
pub struct RunSpec {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Prune a checkpoint; writes model.ztf, model.json, masks.ztf and layers.jsonl.
    Prune(PruneArgs),
    /// Perplexity over a grid of methods and sparsity ratios; writes report.json or report.csv.
    Sweep(SweepArgs),
    /// Print the perplexity of a checkpoint as one JSON line.
    Eval(EvalArgs),
    /// Dump the importance breakdown of one layer.
    Inspect(InspectArgs),
    /// Train the reference toy model and write it with its corpus and golden sweep.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Magnitude,
    Wanda,
    Zpruner,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Magnitude => Method::Magnitude,
            MethodArg::Wanda => Method::Wanda,
            MethodArg::Zpruner => Method::ZPruner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PerNeuron,
    Global,
}

impl From<ModeArg> for PruneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PerNeuron => PruneMode::PerNeuron,
            ModeArg::Global => PruneMode::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Opt,
    Llama,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CommonArgs {
    /// Seed for synthetic data when no corpus archive is given (ZPRUNE_SEED overrides).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker thread cap; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<NonZeroUsize>,
    /// Store wall-clock milliseconds in written artifacts instead of 0.
    #[arg(long)]
    pub record_timings: bool,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ScalingArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Llama)]
    pub family: FamilyArg,
    /// OPT scaling amplitude.
    #[arg(long)]
    pub phi: Option<f64>,
    /// OPT scaling exponent on |x|.
    #[arg(long)]
    pub beta: Option<f64>,
    /// OPT saturation exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// LLaMA scaling exponent on sqrt(x).
    #[arg(long)]
    pub delta: Option<f64>,
}

impl ScalingArgs {
    pub fn params(&self) -> ScalingParams {
        let family = match self.family {
            FamilyArg::Opt => ModelFamily::Opt,
            FamilyArg::Llama => ModelFamily::Llama,
        };
        let d = ScalingParams::for_family(family);
        ScalingParams {
            phi: self.phi.unwrap_or(d.phi),
            beta: self.beta.unwrap_or(d.beta),
            gamma: self.gamma.unwrap_or(d.gamma),
            delta: self.delta.unwrap_or(d.delta),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct PruneArgs {
    /// Dense checkpoint (a model.json manifest must sit next to it).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Zpruner)]
    pub method: MethodArg,
    /// Fraction of weights to drop, in [0, 1].
    #[arg(long, default_value_t = 0.5, value_parser = parse_rho)]
    pub rho: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::PerNeuron)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub scaling: ScalingArgs,
    /// Corpus archive with a `calib` entry; synthetic data from --seed otherwise.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write importance.ztf with the per-layer importance breakdown.
    #[arg(long)]
    pub dump_importance: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Magnitude, MethodArg::Wanda, MethodArg::Zpruner])]
    pub methods: Vec<MethodArg>,
    /// Comma-separated ascending ratios in [0, 1).
    #[arg(long, value_delimiter = ',', value_parser = parse_rho, default_values_t = DEFAULT_RHOS)]
    pub rhos: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::PerNeuron)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub scaling: ScalingArgs,
    /// Corpus archive with a `calib` entry; synthetic data from --seed otherwise.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Archive with an `eval` entry; defaults to the --calib archive.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Model tag for report rows; defaults to the checkpoint file stem.
    #[arg(long)]
    pub tag: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Archive with an `eval` entry; synthetic data from --seed otherwise.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Canonical layer name, e.g. blocks/0/attn/q.
    #[arg(long)]
    pub layer: String,
    #[command(flatten)]
    pub scaling: ScalingArgs,
    /// Corpus archive with a `calib` entry; synthetic data from --seed otherwise.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Write importance.ztf here as well as printing the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_rho(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(v)
}

impl RunSpec {
    pub fn common(&self) -> &CommonArgs {
        match &self.command {
            Command::Prune(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Inspect(a) => &a.common,
            Command::Fixture(a) => &a.common,
        }
    }

    fn common_mut(&mut self) -> &mut CommonArgs {
        match &mut self.command {
            Command::Prune(a) => &mut a.common,
            Command::Sweep(a) => &mut a.common,
            Command::Eval(a) => &mut a.common,
            Command::Inspect(a) => &mut a.common,
            Command::Fixture(a) => &mut a.common,
        }
    }
}

/// Parses `argv` (including the program name) and applies `ZPRUNE_SEED`.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunSpec, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    parse_args_with_env(argv, std::env::var(SEED_ENV).ok())
}

/// As [`parse_args`] with the seed override passed explicitly.
pub fn parse_args_with_env<I, T>(argv: I, seed_env: Option<String>) -> std::result::Result<RunSpec, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut spec = RunSpec::try_parse_from(argv)?;
    if let Command::Sweep(a) = &spec.command {
        validate_sweep_args(a)?;
    }
    if let Some(raw) = seed_env {
        let seed = raw.trim().parse().map_err(|_| {
            RunSpec::command().error(
                ErrorKind::ValueValidation,
                format!("{SEED_ENV}={raw} is not an unsigned 64-bit integer"),
            )
        })?;
        spec.common_mut().seed = seed;
    }
    Ok(spec)
}

fn validate_sweep_args(a: &SweepArgs) -> std::result::Result<(), clap::Error> {
    let usage = |msg: String| RunSpec::command().error(ErrorKind::ValueValidation, msg);
    if a.rhos.iter().any(|&r| r >= 1.0) {
        return Err(usage("--rhos values must be below 1".into()));
    }
    if a.rhos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--rhos must be strictly ascending".into()));
    }
    for (i, m) in a.methods.iter().enumerate() {
        if a.methods[..i].contains(m) {
            return Err(usage(format!("--methods lists {m:?} twice").to_lowercase()));
        }
    }
    Ok(())
}

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

fn artifact_clock(common: &CommonArgs) -> Box<dyn Clock + Sync> {
    if common.record_timings {
        Box::new(SystemClock::new())
    } else {
        Box::new(NoClock)
    }
}

/// Files are written into a hidden directory inside the output directory and
/// moved into place only once every file of the result set exists.
struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
    files: Vec<String>,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| ZpruneError::io(out, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".zprune-stage-")
            .tempdir_in(out)
            .map_err(|e| ZpruneError::io(out, e))?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.path().join(name)
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| ZpruneError::io(&path, e))
    }

    fn commit(self) -> Result<()> {
        for name in &self.files {
            let target = self.out.join(name);
            fs::rename(self.dir.path().join(name), &target).map_err(|e| ZpruneError::io(&target, e))?;
        }
        Ok(())
    }
}

fn load_calib(path: Option<&Path>, seed: u64, cfg: &ToyModelConfig, synth: &mut Option<SynthData>) -> Result<Vec<Vec<Token>>> {
    match path {
        Some(p) => read_calibration(p),
        None => Ok(synthetic(seed, cfg, synth)?.calib.clone()),
    }
}

fn load_eval(path: Option<&Path>, seed: u64, cfg: &ToyModelConfig, synth: &mut Option<SynthData>) -> Result<Vec<Token>> {
    match path {
        Some(p) => read_eval_stream(p),
        None => Ok(synthetic(seed, cfg, synth)?.eval.clone()),
    }
}

fn synthetic<'a>(seed: u64, cfg: &ToyModelConfig, cache: &'a mut Option<SynthData>) -> Result<&'a SynthData> {
    if cache.is_none() {
        *cache = Some(synth_data(seed, cfg.context_len)?);
    }
    Ok(cache.as_ref().expect("filled above"))
}

fn find_layer(model: &ToyModel, name: &str) -> Result<(usize, LinearKind)> {
    (0..model.blocks.len())
        .flat_map(|b| LinearKind::ALL.into_iter().map(move |k| (b, k)))
        .find(|&(b, k)| layer_id(b, k) == name)
        .ok_or_else(|| EngineError::InvalidConfig(format!("no prunable layer named `{name}`")).into())
}

fn model_tag(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn json_line(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("json value serializes")
}

/// Runs a parsed spec. Returns the process exit code; runtime failures are
/// reported as one JSON line on stderr.
pub fn run(spec: &RunSpec) -> i32 {
    let started = Instant::now();
    let result = match &spec.command {
        Command::Prune(a) => run_prune(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Eval(a) => run_eval(a),
        Command::Inspect(a) => run_inspect(a),
        Command::Fixture(a) => run_fixture(a),
    };
    match result {
        Ok(()) => {
            eprintln!("done in {} ms", started.elapsed().as_millis());
            0
        }
        Err(e) => {
            eprintln!(
                "{}",
                json_line(&serde_json::json!({"error": e.kind(), "message": e.to_string()}))
            );
            1
        }
    }
}

pub fn run_prune(a: &PruneArgs) -> Result<()> {
    let (model, _, source_hash) = load_checkpoint(&a.model)?;
    let calib = load_calib(a.calib.as_deref(), a.common.seed, &model.config, &mut None)?;
    let req = PruneRequest::new(a.method.into(), a.rho, a.mode.into(), a.scaling.params());
    let clock = artifact_clock(&a.common);
    let outcome = prune_model(&model, &calib, &req, clock.as_ref())?;

    let mut stage = Staging::new(&a.out)?;
    let mut manifest = CheckpointManifest::new(model.config);
    manifest.pruning = Some(PruneProvenance {
        method: req.method.as_str().into(),
        rho: req.rho,
        mode: req.mode.as_str().into(),
        family: req.scaling.model_family.as_str().into(),
        calib_sequences: calib.len(),
        source_sha256: source_hash,
    });
    let model_path = stage.path("model.ztf");
    stage.files.push("model.json".into());
    save_checkpoint(&outcome.model, &model_path, &mut manifest)?;

    let masks: TensorMap = outcome
        .masks
        .iter()
        .map(|(id, mask)| (id.clone(), mask.keep.clone()))
        .collect();
    write_archive(&masks, stage.path("masks.ztf"))?;
    stage.write("layers.jsonl", render_layer_reports(&outcome.reports).as_bytes())?;

    if a.dump_importance {
        let mut dump = TensorMap::new();
        let layers = (0..model.blocks.len()).flat_map(|b| LinearKind::ALL.into_iter().map(move |k| (b, k)));
        for ((b, kind), stats) in layers.zip(&outcome.stats) {
            let id = layer_id(b, kind);
            let w = model.blocks[b].linear(kind);
            let breakdown = combined_importance(w, &req.importance)?;
            for (name, m) in breakdown.named_entries() {
                dump.insert(format!("{id}/{name}"), m.clone());
            }
            dump.insert(format!("{id}/scaled"), zpruner_metric(w, stats, &req)?);
            dump.insert(stats.entry_name(), stats.to_matrix());
        }
        write_archive(&dump, stage.path("importance.ztf"))?;
    }
    stage.commit()?;

    let dropped: usize = outcome.reports.iter().map(|r| r.dropped).sum();
    let total: usize = outcome.reports.iter().map(|r| r.kept + r.dropped).sum();
    eprintln!(
        "pruned {} layers with {} at rho {}: {dropped}/{total} weights dropped",
        outcome.reports.len(),
        req.method.as_str(),
        req.rho
    );
    Ok(())
}

fn sweep_spec(tag: String, methods: &[Method], rhos: &[f64], mode: PruneMode, scaling: ScalingParams) -> SweepSpec {
    SweepSpec {
        model_tag: tag,
        methods: methods.to_vec(),
        rhos: rhos.to_vec(),
        base: PruneRequest::new(Method::ZPruner, 0.5, mode, scaling),
    }
}

pub fn run_sweep(a: &SweepArgs) -> Result<()> {
    let (model, _, hash) = load_checkpoint(&a.model)?;
    let mut synth = None;
    let calib = load_calib(a.calib.as_deref(), a.common.seed, &model.config, &mut synth)?;
    let eval_src = a.eval.as_deref().or(a.calib.as_deref());
    let eval = load_eval(eval_src, a.common.seed, &model.config, &mut synth)?;

    let methods: Vec<Method> = a.methods.iter().map(|&m| m.into()).collect();
    let tag = a.tag.clone().unwrap_or_else(|| model_tag(&a.model));
    let spec = sweep_spec(tag, &methods, &a.rhos, a.mode.into(), a.scaling.params());
    let clock = artifact_clock(&a.common);
    let table = parallel_sweep(&model, &spec, &calib, &eval, clock.as_ref(), a.common.threads.map(NonZeroUsize::get))?;

    let prov = Provenance {
        engine_version: ENGINE_VERSION.into(),
        fixture_hash: hash,
        seed: a.common.seed,
        ppl_stride: model.config.context_len,
    };
    let text = render_report(&table, &prov, a.format)?;
    let mut stage = Staging::new(&a.out)?;
    stage.write(&format!("report.{}", a.format.extension()), text.as_bytes())?;
    stage.commit()?;
    eprintln!("{} sweep rows written", table.rows.len());
    Ok(())
}

pub fn run_eval(a: &EvalArgs) -> Result<()> {
    let (model, _, hash) = load_checkpoint(&a.model)?;
    let eval = load_eval(a.eval.as_deref(), a.common.seed, &model.config, &mut None)?;
    let report = perplexity(&model, &eval)?;
    println!(
        "{}",
        json_line(&serde_json::json!({
            "model_tag": model_tag(&a.model),
            "ppl": report.ppl,
            "mean_nll": report.mean_nll,
            "tokens_evaluated": report.tokens,
            "clamped_probs": report.clamped,
            "ppl_stride": report.stride,
            "fixture_hash": hash,
        }))
    );
    Ok(())
}

fn summary(m: &Matrix) -> serde_json::Value {
    let v = m.as_slice();
    let min = v.iter().copied().fold(f32::INFINITY, f32::min);
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64;
    serde_json::json!({"min": min, "max": max, "mean": mean})
}

/// Statistics for the inspected layer come from the dense model.
pub fn run_inspect(a: &InspectArgs) -> Result<()> {
    let (model, _, _) = load_checkpoint(&a.model)?;
    let (block, kind) = find_layer(&model, &a.layer)?;
    let calib = load_calib(a.calib.as_deref(), a.common.seed, &model.config, &mut None)?;

    let w = model.blocks[block].linear(kind);
    let mut acc = FeatureNormAccumulator::new(w.cols());
    for seq in calib.iter().filter(|s| !s.is_empty()) {
        let (_, captures) = model.forward_with_capture(seq)?;
        acc.add(captures[block].input_of(kind))?;
    }
    let stats = acc.finish(a.layer.clone())?;
    let cfg = ImportanceConfig::default();
    let bd = combined_importance(w, &cfg)?;
    let scaled = apply_activation_scaling(&bd.combined, &stats, &a.scaling.params())?;

    let parts: [(&str, &Matrix); 10] = [
        ("weight", w),
        ("row_normalized", &bd.row_normalized),
        ("col_normalized", &bd.col_normalized),
        ("row_z", &bd.row_z),
        ("col_z", &bd.col_z),
        ("row_amp", &bd.row_amp),
        ("col_amp", &bd.col_amp),
        ("alpha", &bd.alpha),
        ("combined", &bd.combined),
        ("scaled", &scaled),
    ];
    let mut entries = serde_json::Map::new();
    for (name, m) in parts {
        entries.insert(name.into(), summary(m));
    }
    println!(
        "{}",
        json_line(&serde_json::json!({
            "layer_id": a.layer,
            "shape": [w.rows(), w.cols()],
            "calib_tokens": stats.token_count,
            "entries": entries,
        }))
    );

    if let Some(out) = &a.out {
        let mut dump: TensorMap = parts.iter().map(|(n, m)| ((*n).to_string(), (*m).clone())).collect();
        dump.insert("xnorm".into(), stats.to_matrix());
        let mut stage = Staging::new(out)?;
        write_archive(&dump, stage.path("importance.ztf"))?;
        stage.commit()?;
    }
    Ok(())
}

/// Trains the reference checkpoint and writes model.ztf, model.json,
/// corpus.ztf and golden_sweep.json.
pub fn run_fixture(a: &FixtureArgs) -> Result<()> {
    let seed = a.common.seed;
    let cfg = ToyModelConfig {
        seed,
        ..ToyModelConfig::default()
    };
    let data = synth_data(seed, cfg.context_len)?;
    let untrained = ToyModel::init(cfg)?;
    let untrained_ppl = perplexity(&untrained, &data.eval)?.ppl;

    let tc = TrainConfig {
        steps: a.steps,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let model = train_toy_with(&data.train, cfg, &tc, |s| {
        if s.step % 100 == 0 || s.step + 1 == tc.steps {
            eprintln!("step {:>5} loss {:.4} lr {:.4} ({} s)", s.step, s.loss, s.lr, started.elapsed().as_secs());
        }
    })?;
    let dense = perplexity(&model, &data.eval)?;

    let tag = "model".to_string();
    let scaling = ScalingParams::llama();
    let spec = sweep_spec(tag, &Method::ALL, &DEFAULT_RHOS, PruneMode::PerNeuron, scaling);
    let table = parallel_sweep(&model, &spec, &data.calib, &data.eval, &NoClock, a.common.threads.map(NonZeroUsize::get))?;

    let mut manifest = CheckpointManifest::new(cfg);
    manifest.fixture = Some(FixtureRecord {
        train: TrainRecord {
            steps: tc.steps,
            batch_size: tc.batch_size,
            lr: tc.lr,
            final_lr_fraction: tc.final_lr_fraction,
            clip_norm: tc.clip_norm,
        },
        corpus: CorpusRecord {
            seed,
            length: SYNTH_LENGTH,
            calib_sequences: CALIB_SEQUENCES,
            eval_tokens: EVAL_TOKENS,
        },
        untrained_ppl,
        dense_ppl: dense.ppl,
        eval_stride: dense.stride,
        sweep: sweep_record(&table, &spec),
    });

    let mut stage = Staging::new(&a.out)?;
    let model_path = stage.path("model.ztf");
    stage.files.push("model.json".into());
    let hash = save_checkpoint(&model, &model_path, &mut manifest)?;
    write_corpus(&stage.path("corpus.ztf"), &data.calib, &data.eval)?;
    let prov = Provenance {
        engine_version: ENGINE_VERSION.into(),
        fixture_hash: hash,
        seed,
        ppl_stride: cfg.context_len,
    };
    stage.write("golden_sweep.json", render_report(&table, &prov, ReportFormat::Json)?.as_bytes())?;
    stage.commit()?;
    eprintln!("untrained ppl {untrained_ppl:.4}, dense ppl {:.4}", dense.ppl);
    Ok(())
}

fn sweep_record(table: &SweepTable, spec: &SweepSpec) -> SweepRecord {
    let mut ppl = BTreeMap::new();
    for &m in &spec.methods {
        let row: Vec<f64> = spec
            .rhos
            .iter()
            .map(|&r| table.get(Some(m), r).map_or(f64::NAN, |e| e.ppl))
            .collect();
        ppl.insert(m.as_str().to_string(), row);
    }
    SweepRecord {
        mode: spec.base.mode.as_str().into(),
        family: spec.base.scaling.model_family.as_str().into(),
        rhos: spec.rhos.clone(),
        ppl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<RunSpec, clap::Error> {
        parse_args_with_env(std::iter::once("zprune").chain(args.iter().copied()), None)
    }

    #[test]
    fn prune_echo() {
        let spec = parse(&[
            "prune", "--model", "m.ztf", "--method", "zpruner", "--rho", "0.5", "--mode", "per-neuron", "--family",
            "llama", "--calib", "c.ztf", "--out", "r/",
        ])
        .unwrap();
        let Command::Prune(a) = spec.command else { panic!("not prune") };
        assert_eq!(a.model, PathBuf::from("m.ztf"));
        assert_eq!(a.method, MethodArg::Zpruner);
        assert_eq!(a.rho, 0.5);
        assert_eq!(a.mode, ModeArg::PerNeuron);
        assert_eq!(a.scaling.family, FamilyArg::Llama);
        assert_eq!(a.calib, Some(PathBuf::from("c.ztf")));
        assert_eq!(a.out, PathBuf::from("r/"));
        assert_eq!(a.common.seed, 42);
    }

    #[test]
    fn rho_out_of_range_names_flag() {
        let err = parse(&["prune", "--model", "m.ztf", "--rho", "1.5", "--out", "r"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--rho"));
    }

    #[test]
    fn sweep_rhos_list() {
        let spec = parse(&["sweep", "--model", "m.ztf", "--rhos", "0.1,0.2,0.3", "--out", "r"]).unwrap();
        let Command::Sweep(a) = spec.command else { panic!("not sweep") };
        assert_eq!(a.rhos, vec![0.1, 0.2, 0.3]);
        assert_eq!(a.methods.len(), 3);
    }

    #[test]
    fn sweep_rejects_unsorted_rhos() {
        let err = parse(&["sweep", "--model", "m", "--rhos", "0.3,0.1", "--out", "r"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--rhos"));
    }

    #[test]
    fn seed_env_overrides_flag() {
        let argv = ["zprune", "eval", "--model", "m.ztf", "--seed", "7"];
        let spec = parse_args_with_env(argv, Some("99".into())).unwrap();
        assert_eq!(spec.common().seed, 99);
        assert!(parse_args_with_env(argv, Some("x".into())).is_err());
    }

    #[test]
    fn missing_required_flag() {
        let err = parse(&["prune", "--rho", "0.5", "--out", "r"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--model"));
    }

    #[test]
    fn scaling_overrides() {
        let spec = parse(&["inspect", "--model", "m", "--layer", "blocks/0/attn/q", "--family", "opt", "--beta", "0.5"]).unwrap();
        let Command::Inspect(a) = spec.command else { panic!("not inspect") };
        let p = a.scaling.params();
        assert_eq!(p.model_family, ModelFamily::Opt);
        assert_eq!(p.beta, 0.5);
        assert_eq!(p.gamma, 2.5);
    }
}
