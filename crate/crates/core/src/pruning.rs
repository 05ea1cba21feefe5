//! Mask construction, baseline criteria and the layer-sequential pruning
//! loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::activation::{apply_activation_scaling, ActivationStats, FeatureNormAccumulator, ScalingParams};
use crate::importance::{combined_importance, ImportanceConfig};
use crate::model::{layer_id, CaptureSite, LinearKind, Token, ToyModel};
use crate::{matrix_sparsity, Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ZPruner,
    Magnitude,
    Wanda,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Magnitude, Method::Wanda, Method::ZPruner];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZPruner => "zpruner",
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
        }
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zpruner" => Ok(Method::ZPruner),
            "magnitude" => Ok(Method::Magnitude),
            "wanda" => Ok(Method::Wanda),
            other => Err(Error::InvalidConfig(format!("unknown pruning method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PruneMode {
    /// Every output row loses the same number of weights.
    PerNeuron,
    /// One ranking over the flattened matrix.
    Global,
}

impl PruneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMode::PerNeuron => "per_neuron",
            PruneMode::Global => "global",
        }
    }
}

impl core::str::FromStr for PruneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_neuron" | "per-neuron" => Ok(PruneMode::PerNeuron),
            "global" => Ok(PruneMode::Global),
            other => Err(Error::InvalidConfig(format!("unknown pruning mode `{other}`"))),
        }
    }
}

/// Ties in the metric are broken by ascending row-major flat index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    IndexOrder,
}

/// Binary keep-mask (1 keeps, 0 prunes) with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub keep: Matrix,
    pub mode: PruneMode,
    pub rho: f64,
    /// Criterion that produced the metric; `None` for a mask built directly
    /// from a caller-supplied metric.
    pub method: Option<Method>,
    pub tie_break: TieBreak,
}

impl PruneMask {
    pub fn kept(&self) -> usize {
        self.keep.len() - self.dropped()
    }

    pub fn dropped(&self) -> usize {
        self.keep.count_zeros()
    }

    #[inline]
    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.keep.get(row, col) != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneRequest {
    pub method: Method,
    pub rho: f64,
    pub mode: PruneMode,
    pub importance: ImportanceConfig,
    pub scaling: ScalingParams,
    /// Post-mask weight reconstruction. No reconstruction method is defined,
    /// so `true` is rejected.
    pub reconstruction: bool,
}

impl PruneRequest {
    pub fn new(method: Method, rho: f64, mode: PruneMode, scaling: ScalingParams) -> Self {
        Self {
            method,
            rho,
            mode,
            importance: ImportanceConfig::default(),
            scaling,
            reconstruction: false,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if self.reconstruction {
            return Err(Error::NotImplemented("weight reconstruction after masking"));
        }
        self.importance.validate()?;
        self.scaling.validate()
    }
}

impl Default for PruneRequest {
    fn default() -> Self {
        Self::new(Method::ZPruner, 0.5, PruneMode::PerNeuron, ScalingParams::llama())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("sparsity ratio {rho} outside [0, 1]")))
    }
}

/// `floor(rho * n)`, tolerant of the representation error of decimal ratios
/// such as `0.29 * 100`.
pub fn drop_count(rho: f64, n: usize) -> usize {
    let raw = libm::floor(rho * n as f64 + 1e-9);
    (raw.max(0.0) as usize).min(n)
}

fn ascending(metric: &[f32]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| metric[a].total_cmp(&metric[b]).then(a.cmp(&b))
}

/// Drops exactly `floor(rho * n)` lowest-metric weights per row
/// (per-neuron) or `floor(rho * rows * cols)` overall (global).
pub fn build_mask(metric: &Matrix, rho: f64, mode: PruneMode) -> Result<PruneMask> {
    check_rho(rho)?;
    if metric.as_slice().iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidMetric);
    }
    let (rows, cols) = metric.shape();
    let mut keep = Matrix::filled(rows, cols, 1.0)?;
    match mode {
        PruneMode::PerNeuron => {
            let k = drop_count(rho, cols);
            let mut order: Vec<usize> = (0..cols).collect();
            for r in 0..rows {
                let row = metric.row(r);
                order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
                order.sort_unstable_by(ascending(row));
                for &c in &order[..k] {
                    keep.set(r, c, 0.0);
                }
            }
        }
        PruneMode::Global => {
            let k = drop_count(rho, rows * cols);
            let mut order: Vec<usize> = (0..rows * cols).collect();
            order.sort_unstable_by(ascending(metric.as_slice()));
            for &flat in &order[..k] {
                keep.as_mut_slice()[flat] = 0.0;
            }
        }
    }
    Ok(PruneMask {
        keep,
        mode,
        rho,
        method: None,
        tie_break: TieBreak::IndexOrder,
    })
}

/// Kept weights are copied bit for bit; dropped weights become `+0.0`.
pub fn apply_mask(w: &Matrix, mask: &PruneMask) -> Result<Matrix> {
    w.ensure_same_shape(&mask.keep)?;
    let mut out = w.clone();
    for (v, &k) in out.as_mut_slice().iter_mut().zip(mask.keep.as_slice()) {
        if k == 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

pub fn magnitude_metric(w: &Matrix) -> Matrix {
    w.map(f32::abs)
}

/// `|W_ij| * norm_j`.
pub fn wanda_metric(w: &Matrix, stats: &ActivationStats) -> Result<Matrix> {
    if stats.len() != w.cols() {
        return Err(Error::Shape(format!(
            "{} feature norms for a matrix with {} columns",
            stats.len(),
            w.cols()
        )));
    }
    let mut out = magnitude_metric(w);
    for row in out.as_mut_slice().chunks_exact_mut(w.cols()) {
        for (v, &n) in row.iter_mut().zip(&stats.feature_norms) {
            *v *= n;
        }
    }
    Ok(out)
}

/// Statistical importance of `w` scaled per input feature by the
/// family-specific activation function.
pub fn zpruner_metric(w: &Matrix, stats: &ActivationStats, req: &PruneRequest) -> Result<Matrix> {
    let breakdown = combined_importance(w, &req.importance)?;
    apply_activation_scaling(&breakdown.combined, stats, &req.scaling)
}

pub fn metric_for(w: &Matrix, stats: &ActivationStats, req: &PruneRequest) -> Result<Matrix> {
    match req.method {
        Method::Magnitude => Ok(magnitude_metric(w)),
        Method::Wanda => wanda_metric(w, stats),
        Method::ZPruner => zpruner_metric(w, stats, req),
    }
}

/// Scores, masks and zeroes one weight matrix.
pub fn prune_layer(w: &Matrix, stats: &ActivationStats, req: &PruneRequest) -> Result<(Matrix, PruneMask)> {
    req.validate()?;
    w.ensure_finite()?;
    let metric = metric_for(w, stats, req)?;
    let mut mask = build_mask(&metric, req.rho, req.mode)?;
    mask.method = Some(req.method);
    let pruned = apply_mask(w, &mask)?;
    Ok((pruned, mask))
}

/// Millisecond time source for per-layer timings.
pub trait Clock {
    fn now_millis(&self) -> u64;
}

/// Reports zero for every reading.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_millis(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer_id: String,
    pub method: Method,
    pub rho: f64,
    pub mode: PruneMode,
    pub kept: usize,
    pub dropped: usize,
    pub sparsity: f64,
    pub millis: u64,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: ToyModel,
    pub reports: Vec<LayerReport>,
    /// Calibration statistics, one per prunable linear, in model order.
    pub stats: Vec<ActivationStats>,
    pub masks: Vec<(String, PruneMask)>,
}

/// Prunes every block with the same request.
pub fn prune_model(model: &ToyModel, calib: &[Vec<Token>], req: &PruneRequest, clock: &dyn Clock) -> Result<PruneOutcome> {
    prune_model_planned(model, calib, |_| *req, clock)
}

/// Layer-sequential pruning with a per-block request.
///
/// Block `b` sees calibration activations produced by the already pruned
/// blocks `0..b`. All linears of a block are scored from one capture taken
/// with the block's dense weights; the block output is then recomputed with
/// the pruned weights before moving on.
pub fn prune_model_planned(
    model: &ToyModel,
    calib: &[Vec<Token>],
    plan: impl Fn(usize) -> PruneRequest,
    clock: &dyn Clock,
) -> Result<PruneOutcome> {
    if calib.is_empty() || calib.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCalibration);
    }
    let mut pruned = model.clone();
    let mut acts = calib
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| pruned.embed_tokens(s))
        .collect::<Result<Vec<_>>>()?;

    let cfg = model.config;
    let mut reports = Vec::with_capacity(model.prunable_count());
    let mut all_stats = Vec::with_capacity(model.prunable_count());
    let mut masks = Vec::with_capacity(model.prunable_count());

    for b in 0..model.blocks.len() {
        let req = plan(b);
        req.validate()?;

        let sites = [
            CaptureSite::AttnIn,
            CaptureSite::AttnOut,
            CaptureSite::MlpIn,
            CaptureSite::MlpHidden,
        ];
        let mut accs = [
            FeatureNormAccumulator::new(cfg.d_model),
            FeatureNormAccumulator::new(cfg.d_model),
            FeatureNormAccumulator::new(cfg.d_model),
            FeatureNormAccumulator::new(cfg.d_ff),
        ];
        for x in &acts {
            let mut cap = None;
            pruned.block_forward(b, x, Some(&mut cap));
            let cap = cap.expect("capture requested");
            for (acc, site) in accs.iter_mut().zip(sites) {
                acc.add(cap.at(site))?;
            }
        }

        for kind in LinearKind::ALL {
            let id = layer_id(b, kind);
            let site_idx = sites.iter().position(|&s| s == kind.input_site()).expect("known site");
            let stats = accs[site_idx].finish(id.clone()).map_err(|e| e.in_layer(&id))?;

            let start = clock.now_millis();
            let w = pruned.blocks[b].linear(kind);
            let (w_pruned, mask) = prune_layer(w, &stats, &req).map_err(|e| e.in_layer(&id))?;
            let millis = clock.now_millis().saturating_sub(start);

            reports.push(LayerReport {
                layer_id: id.clone(),
                method: req.method,
                rho: req.rho,
                mode: req.mode,
                kept: mask.kept(),
                dropped: mask.dropped(),
                sparsity: matrix_sparsity(&w_pruned),
                millis,
            });
            *pruned.blocks[b].linear_mut(kind) = w_pruned;
            all_stats.push(stats);
            masks.push((id, mask));
        }

        for x in acts.iter_mut() {
            *x = pruned.block_forward(b, x, None);
        }
    }

    Ok(PruneOutcome {
        model: pruned,
        reports,
        stats: all_stats,
        masks,
    })
}
