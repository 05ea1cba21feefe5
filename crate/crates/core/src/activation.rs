//! Calibration activation statistics and the family-specific scaling that
//! turns a statistical importance matrix into the final pruning metric.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Per-input-feature L2 norms of one linear layer's calibration inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    pub feature_norms: Vec<f32>,
    pub token_count: usize,
    pub layer_id: String,
}

impl ActivationStats {
    pub fn new(feature_norms: Vec<f32>, token_count: usize, layer_id: impl Into<String>) -> Result<Self> {
        if feature_norms.is_empty() || token_count == 0 {
            return Err(Error::EmptyCalibration);
        }
        if feature_norms.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain("feature norms must be finite and non-negative".into()));
        }
        Ok(Self {
            feature_norms,
            token_count,
            layer_id: layer_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.feature_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_norms.is_empty()
    }

    /// The stats as a `1 x n` matrix, the persisted form.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(1, self.feature_norms.len(), self.feature_norms.clone()).expect("non-empty")
    }

    pub fn entry_name(&self) -> String {
        format!("xnorm/{}", self.layer_id)
    }
}

/// Streaming sum of squares per feature.
///
/// Chunks may be added in any grouping; results are bitwise reproducible
/// as long as rows are added in the same order.
#[derive(Debug, Clone)]
pub struct FeatureNormAccumulator {
    sum_sq: Vec<f64>,
    tokens: usize,
}

impl FeatureNormAccumulator {
    pub fn new(features: usize) -> Self {
        Self {
            sum_sq: vec![0.0; features],
            tokens: 0,
        }
    }

    pub fn features(&self) -> usize {
        self.sum_sq.len()
    }

    pub fn add_rows(&mut self, block: &[f32], features: usize) -> Result<()> {
        if features != self.sum_sq.len() || !block.len().is_multiple_of(features) {
            return Err(Error::Shape(format!(
                "activation block of {} values does not fit {} features",
                block.len(),
                self.sum_sq.len()
            )));
        }
        if block.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        for row in block.chunks_exact(features) {
            for (acc, &x) in self.sum_sq.iter_mut().zip(row) {
                let x = f64::from(x);
                *acc += x * x;
            }
        }
        self.tokens += block.len() / features;
        Ok(())
    }

    pub fn add(&mut self, activations: &Matrix) -> Result<()> {
        self.add_rows(activations.as_slice(), activations.cols())
    }

    pub fn merge(&mut self, other: &FeatureNormAccumulator) -> Result<()> {
        if other.sum_sq.len() != self.sum_sq.len() {
            return Err(Error::Shape("accumulators disagree on feature count".into()));
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.tokens += other.tokens;
        Ok(())
    }

    pub fn finish(&self, layer_id: impl Into<String>) -> Result<ActivationStats> {
        if self.tokens == 0 {
            return Err(Error::EmptyCalibration);
        }
        let norms = self.sum_sq.iter().map(|&s| libm::sqrt(s) as f32).collect();
        ActivationStats::new(norms, self.tokens, layer_id)
    }
}

/// Column-wise L2 norm over all calibration tokens (rows) of `activations`.
pub fn collect_feature_norms(activations: &Matrix, layer_id: impl Into<String>) -> Result<ActivationStats> {
    let mut acc = FeatureNormAccumulator::new(activations.cols());
    acc.add(activations)?;
    acc.finish(layer_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    Opt,
    Llama,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Opt => "opt",
            ModelFamily::Llama => "llama",
        }
    }
}

impl core::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opt" => Ok(ModelFamily::Opt),
            "llama" => Ok(ModelFamily::Llama),
            other => Err(Error::InvalidConfig(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub model_family: ModelFamily,
    pub phi: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl ScalingParams {
    pub fn for_family(model_family: ModelFamily) -> Self {
        Self {
            model_family,
            phi: 1.0,
            beta: 0.7,
            gamma: 2.5,
            delta: 1.5,
        }
    }

    pub fn opt() -> Self {
        Self::for_family(ModelFamily::Opt)
    }

    pub fn llama() -> Self {
        Self::for_family(ModelFamily::Llama)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0 && self.gamma > 0.0 && self.beta >= 0.0 && self.phi > 0.0;
        let finite = [self.phi, self.beta, self.gamma, self.delta].iter().all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "scaling requires phi > 0, beta >= 0, gamma > 0, delta > 0".into(),
            ))
        }
    }

    /// Scale factor for a feature norm under this family.
    pub fn scale(&self, x: f64) -> Result<f64> {
        match self.model_family {
            ModelFamily::Opt => Ok(opt_scale(x, self)),
            ModelFamily::Llama => llama_scale(x, self),
        }
    }
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self::llama()
    }
}

// tanh(50) rounds to 1.0 in f64
const TANH_ARG_CLAMP: f64 = 50.0;

/// `phi * tanh(|x|^gamma) * |x|^beta`.
pub fn opt_scale(x: f64, p: &ScalingParams) -> f64 {
    let ax = x.abs();
    let inner = libm::pow(ax, p.gamma).min(TANH_ARG_CLAMP);
    p.phi * libm::tanh(inner) * libm::pow(ax, p.beta)
}

/// `sqrt(x)^delta`.
pub fn llama_scale(x: f64, p: &ScalingParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("llama scaling needs x >= 0, got {x}")));
    }
    Ok(libm::pow(libm::sqrt(x), p.delta))
}

/// Multiplies column `j` of `importance` by the family scale of feature norm `j`.
pub fn apply_activation_scaling(importance: &Matrix, stats: &ActivationStats, p: &ScalingParams) -> Result<Matrix> {
    if stats.len() != importance.cols() {
        return Err(Error::Shape(format!(
            "{} feature norms for a matrix with {} columns",
            stats.len(),
            importance.cols()
        )));
    }
    p.validate()?;
    let scales = stats
        .feature_norms
        .iter()
        .map(|&x| p.scale(f64::from(x)))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = importance.clone();
    for row in out.as_mut_slice().chunks_exact_mut(importance.cols()) {
        for (v, s) in row.iter_mut().zip(&scales) {
            *v = (f64::from(*v) * s) as f32;
        }
    }
    Ok(out)
}
