//! Statistical weight importance.
//!
//! A weight matrix is L2-normalized along rows and, separately, along
//! columns. Each normalized matrix is standardized with the mean and
//! population standard deviation taken over all of its elements, and the
//! absolute z-scores are raised to an amplification exponent so that
//! statistical outliers dominate. The two branches are blended per element
//! with a coefficient that is lowered for weights that are small relative to
//! the mean absolute weight of the matrix.
//!
//! All intermediate arithmetic is carried out in `f64`; matrices handed back
//! to callers are rounded to `f32`.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Scalar constants of the importance pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceConfig {
    /// Row-branch weight for ordinary (not small) weights.
    pub blend_base: f64,
    /// Relative reduction of the row-branch weight for small weights.
    pub blend_penalty: f64,
    /// A weight is "small" when `|w| < small_weight_factor * mean(|W|)`.
    pub small_weight_factor: f64,
    pub amp_exponent: f64,
    /// Floor for the standard deviation in z-scoring.
    pub std_epsilon: f64,
    /// Floor for row/column norms in normalization.
    pub norm_epsilon: f64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            blend_base: 0.7,
            blend_penalty: 0.3,
            small_weight_factor: 0.1,
            amp_exponent: 3.0,
            std_epsilon: 1e-8,
            norm_epsilon: 1e-12,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.blend_base > 0.0 && self.blend_base <= 1.0) {
            return bad("blend_base must lie in (0, 1]");
        }
        if !(self.blend_penalty >= 0.0 && self.blend_penalty < 1.0) {
            return bad("blend_penalty must lie in [0, 1)");
        }
        if !(self.amp_exponent > 0.0 && self.amp_exponent.is_finite()) {
            return bad("amp_exponent must be positive");
        }
        if !(self.std_epsilon > 0.0 && self.norm_epsilon > 0.0) {
            return bad("epsilons must be positive");
        }
        if !(self.small_weight_factor >= 0.0 && self.small_weight_factor.is_finite()) {
            return bad("small_weight_factor must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

/// Every intermediate of [`combined_importance`], each shaped like the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceBreakdown {
    pub row_normalized: Matrix,
    pub col_normalized: Matrix,
    pub row_z: Matrix,
    pub col_z: Matrix,
    pub row_amp: Matrix,
    pub col_amp: Matrix,
    pub alpha: Matrix,
    pub combined: Matrix,
}

impl ImportanceBreakdown {
    /// The entries persisted when dumping importance for inspection.
    pub fn named_entries(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("row_z", &self.row_z),
            ("col_z", &self.col_z),
            ("alpha", &self.alpha),
            ("combined", &self.combined),
        ]
    }
}

fn widen(m: &Matrix) -> Vec<f64> {
    m.as_slice().iter().map(|&x| f64::from(x)).collect()
}

fn narrow(shape: (usize, usize), v: &[f64]) -> Matrix {
    Matrix::new(shape.0, shape.1, v.iter().map(|&x| x as f32).collect())
        .expect("shape preserved by construction")
}

fn normalize_f64(w: &[f64], rows: usize, cols: usize, axis: Axis, eps: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    match axis {
        Axis::Row => {
            for row in out.chunks_exact_mut(cols) {
                let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>()).max(eps);
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Axis::Col => {
            let mut sq = alloc::vec![0.0f64; cols];
            for row in w.chunks_exact(cols) {
                for (acc, x) in sq.iter_mut().zip(row) {
                    *acc += x * x;
                }
            }
            let norms: Vec<f64> = sq.into_iter().map(|s| libm::sqrt(s).max(eps)).collect();
            for row in out.chunks_exact_mut(cols) {
                for (x, n) in row.iter_mut().zip(&norms) {
                    *x /= n;
                }
            }
        }
    }
    debug_assert_eq!(out.len(), rows * cols);
    out
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    // shifted by the first element so a constant input has an exact mean
    let shift = x[0];
    let mean = shift + x.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

fn zscore_f64(x: &[f64], eps: f64) -> Vec<f64> {
    let (mean, std) = mean_std(x);
    let std = std.max(eps);
    x.iter().map(|v| (v - mean) / std).collect()
}

fn amplify_f64(d: &[f64], p: f64) -> Vec<f64> {
    d.iter().map(|v| libm::pow(v.abs(), p)).collect()
}

fn alpha_f64(w: &[f64], cfg: &ImportanceConfig) -> Vec<f64> {
    let mean_abs = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    let threshold = cfg.small_weight_factor * mean_abs;
    w.iter()
        .map(|v| {
            let small = if v.abs() < threshold { 1.0 } else { 0.0 };
            cfg.blend_base * (1.0 - cfg.blend_penalty * small)
        })
        .collect()
}

/// Divides each row (or column) by its Euclidean norm, clamped below by `eps`.
pub fn normalize(w: &Matrix, axis: Axis, eps: f64) -> Matrix {
    narrow(w.shape(), &normalize_f64(&widen(w), w.rows(), w.cols(), axis, eps))
}

/// Standardizes with whole-matrix population statistics.
pub fn zscore(x: &Matrix, eps: f64) -> Matrix {
    narrow(x.shape(), &zscore_f64(&widen(x), eps))
}

/// Elementwise `|d|^p`.
pub fn amplify(d: &Matrix, p: f64) -> Result<Matrix> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::Domain(format!("amplification exponent must be positive, got {p}")));
    }
    Ok(narrow(d.shape(), &amplify_f64(&widen(d), p)))
}

/// Elementwise blend coefficient for the row branch.
pub fn blend_alpha(w: &Matrix, cfg: &ImportanceConfig) -> Matrix {
    narrow(w.shape(), &alpha_f64(&widen(w), cfg))
}

pub fn combined_importance(w: &Matrix, cfg: &ImportanceConfig) -> Result<ImportanceBreakdown> {
    cfg.validate()?;
    w.ensure_finite()?;
    let (rows, cols) = w.shape();
    let wide = widen(w);

    let row_norm = normalize_f64(&wide, rows, cols, Axis::Row, cfg.norm_epsilon);
    let col_norm = normalize_f64(&wide, rows, cols, Axis::Col, cfg.norm_epsilon);
    let row_z = zscore_f64(&row_norm, cfg.std_epsilon);
    let col_z = zscore_f64(&col_norm, cfg.std_epsilon);
    let row_amp = amplify_f64(&row_z, cfg.amp_exponent);
    let col_amp = amplify_f64(&col_z, cfg.amp_exponent);
    let alpha = alpha_f64(&wide, cfg);
    let combined: Vec<f64> = alpha
        .iter()
        .zip(row_amp.iter().zip(&col_amp))
        .map(|(a, (r, c))| a * r + (1.0 - a) * c)
        .collect();

    let shape = w.shape();
    Ok(ImportanceBreakdown {
        row_normalized: narrow(shape, &row_norm),
        col_normalized: narrow(shape, &col_norm),
        row_z: narrow(shape, &row_z),
        col_z: narrow(shape, &col_z),
        row_amp: narrow(shape, &row_amp),
        col_amp: narrow(shape, &col_amp),
        alpha: narrow(shape, &alpha),
        combined: narrow(shape, &combined),
    })
}
