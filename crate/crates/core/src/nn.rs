//! Dense kernels shared by inference and training.
//!
//! Every reduction runs in a fixed order so results are bitwise
//! reproducible for identical inputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::Matrix;

pub(crate) const RMS_EPS: f32 = 1e-5;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let a4 = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
    (a4[0] + a4[2]) + (a4[1] + a4[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `x (t x n)` times `w^T` where `w` is `m x n`; returns `t x m`.
pub(crate) fn linear(x: &[f32], w: &Matrix) -> Vec<f32> {
    let n = w.cols();
    let m = w.rows();
    let t = x.len() / n;
    let mut out = vec![0.0f32; t * m];
    for (xr, or) in x.chunks_exact(n).zip(out.chunks_exact_mut(m)) {
        for (o, wr) in or.iter_mut().zip(w.as_slice().chunks_exact(n)) {
            *o = dot(xr, wr);
        }
    }
    out
}

/// Backward of [`linear`]: accumulates `dW += dy^T x` and returns `dx = dy W`.
pub(crate) fn linear_backward(dy: &[f32], x: &[f32], w: &Matrix, dw: &mut Matrix) -> Vec<f32> {
    let n = w.cols();
    let m = w.rows();
    let t = x.len() / n;
    let mut dx = vec![0.0f32; t * n];
    for ((dyr, xr), dxr) in dy.chunks_exact(m).zip(x.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
        for (i, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, w.row(i), dxr);
            axpy(g, xr, dw.row_mut(i));
        }
    }
    dx
}

/// Parameter-free RMS normalization per row. Returns the output and the
/// per-row inverse RMS.
pub(crate) fn rmsnorm(x: &[f32], d: usize) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0f32; x.len()];
    let mut inv = Vec::with_capacity(x.len() / d);
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let ms = dot(xr, xr) / d as f32;
        let r = 1.0 / libm::sqrtf(ms + RMS_EPS);
        for (o, v) in yr.iter_mut().zip(xr) {
            *o = v * r;
        }
        inv.push(r);
    }
    (y, inv)
}

pub(crate) fn rmsnorm_backward(dy: &[f32], y: &[f32], inv: &[f32], d: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; dy.len()];
    for (((dyr, yr), dxr), &r) in dy
        .chunks_exact(d)
        .zip(y.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv)
    {
        let m = dot(dyr, yr) / d as f32;
        for ((o, g), v) in dxr.iter_mut().zip(dyr).zip(yr) {
            *o = r * (g - v * m);
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::tanhf(GELU_C * (x + 0.044_715 * x * x * x)))
}

#[inline]
pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044_715 * x * x * x);
    let th = libm::tanhf(inner);
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// In-place numerically stable softmax.
pub(crate) fn softmax(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = libm::expf(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Splits `t x (heads*dh)` into head-major `heads x t x dh`.
fn split_heads(x: &[f32], t: usize, heads: usize, dh: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for tok in 0..t {
        for h in 0..heads {
            let src = &x[tok * heads * dh + h * dh..][..dh];
            out[(h * t + tok) * dh..][..dh].copy_from_slice(src);
        }
    }
    out
}

fn merge_heads(x: &[f32], t: usize, heads: usize, dh: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for h in 0..heads {
        for tok in 0..t {
            let src = &x[(h * t + tok) * dh..][..dh];
            out[tok * heads * dh + h * dh..][..dh].copy_from_slice(src);
        }
    }
    out
}

/// Saved state of causal attention, needed for the backward pass.
pub(crate) struct AttentionCache {
    /// head-major q, k, v
    qh: Vec<f32>,
    kh: Vec<f32>,
    vh: Vec<f32>,
    /// `heads x t x t`, zero above the diagonal
    probs: Vec<f32>,
}

/// Multi-head causal self-attention over already projected q, k, v.
pub(crate) fn attention(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    t: usize,
    heads: usize,
    keep_cache: bool,
) -> (Vec<f32>, Option<AttentionCache>) {
    let d = q.len() / t;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrtf(dh as f32);
    let qh = split_heads(q, t, heads, dh);
    let kh = split_heads(k, t, heads, dh);
    let vh = split_heads(v, t, heads, dh);
    let mut outh = vec![0.0f32; q.len()];
    let mut probs = if keep_cache { vec![0.0f32; heads * t * t] } else { Vec::new() };
    let mut scores = vec![0.0f32; t];
    for h in 0..heads {
        let base = h * t * dh;
        for i in 0..t {
            let qi = &qh[base + i * dh..][..dh];
            let s = &mut scores[..=i];
            for (j, sj) in s.iter_mut().enumerate() {
                *sj = dot(qi, &kh[base + j * dh..][..dh]) * scale;
            }
            softmax(s);
            let oi = &mut outh[base + i * dh..][..dh];
            for (j, &p) in s.iter().enumerate() {
                axpy(p, &vh[base + j * dh..][..dh], oi);
            }
            if keep_cache {
                probs[(h * t + i) * t..][..=i].copy_from_slice(s);
            }
        }
    }
    let out = merge_heads(&outh, t, heads, dh);
    let cache = keep_cache.then_some(AttentionCache { qh, kh, vh, probs });
    (out, cache)
}

/// Returns `(dq, dk, dv)` in token-major layout.
pub(crate) fn attention_backward(
    dout: &[f32],
    cache: &AttentionCache,
    t: usize,
    heads: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let d = dout.len() / t;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrtf(dh as f32);
    let douth = split_heads(dout, t, heads, dh);
    let mut dq = vec![0.0f32; dout.len()];
    let mut dk = vec![0.0f32; dout.len()];
    let mut dv = vec![0.0f32; dout.len()];
    let mut dp = vec![0.0f32; t];
    for h in 0..heads {
        let base = h * t * dh;
        for i in 0..t {
            let p = &cache.probs[(h * t + i) * t..][..=i];
            let doi = &douth[base + i * dh..][..dh];
            for j in 0..=i {
                dp[j] = dot(doi, &cache.vh[base + j * dh..][..dh]);
                axpy(p[j], doi, &mut dv[base + j * dh..][..dh]);
            }
            let inner = dot(p, &dp[..=i]);
            let qi = &cache.qh[base + i * dh..][..dh];
            for j in 0..=i {
                let ds = p[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                axpy(ds, &cache.kh[base + j * dh..][..dh], &mut dq[base + i * dh..][..dh]);
                axpy(ds, qi, &mut dk[base + j * dh..][..dh]);
            }
        }
    }
    (
        merge_heads(&dq, t, heads, dh),
        merge_heads(&dk, t, heads, dh),
        merge_heads(&dv, t, heads, dh),
    )
}
