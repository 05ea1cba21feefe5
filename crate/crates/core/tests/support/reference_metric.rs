//! Loop-by-loop reference for the z-score importance metric with
//! activation scaling. Shared by integration tests of both crates.

use zprune_core::activation::ModelFamily;

/// Straight-line reference: `w[i][j]`, `x[j]`, everything in f64.
pub fn oracle(w: &[Vec<f64>], x: &[f64], family: ModelFamily) -> Vec<Vec<f64>> {
    let m = w.len();
    let n = w[0].len();

    let mut row_norm = vec![0.0; m];
    let mut col_norm = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            row_norm[i] += w[i][j] * w[i][j];
            col_norm[j] += w[i][j] * w[i][j];
        }
    }
    for v in row_norm.iter_mut().chain(col_norm.iter_mut()) {
        *v = v.sqrt();
        if *v < 1e-12 {
            *v = 1e-12;
        }
    }

    let mut wr = vec![vec![0.0; n]; m];
    let mut wc = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            wr[i][j] = w[i][j] / row_norm[i];
            wc[i][j] = w[i][j] / col_norm[j];
        }
    }

    let count = (m * n) as f64;
    let stats = |a: &Vec<Vec<f64>>| {
        let mut mu = 0.0;
        for row in a {
            for v in row {
                mu += v;
            }
        }
        mu /= count;
        let mut var = 0.0;
        for row in a {
            for v in row {
                var += (v - mu) * (v - mu);
            }
        }
        let sigma = (var / count).sqrt();
        (mu, if sigma < 1e-8 { 1e-8 } else { sigma })
    };
    let (mu_r, sigma_r) = stats(&wr);
    let (mu_c, sigma_c) = stats(&wc);

    let mut mean_abs = 0.0;
    for row in w {
        for v in row {
            mean_abs += v.abs();
        }
    }
    mean_abs /= count;

    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let dr = (wr[i][j] - mu_r) / sigma_r;
            let dc = (wc[i][j] - mu_c) / sigma_c;
            let ir = dr.abs().powi(3);
            let ic = dc.abs().powi(3);
            let s = if w[i][j].abs() < 0.1 * mean_abs { 1.0 } else { 0.0 };
            let alpha = 0.7 * (1.0 - 0.3 * s);
            let imp = alpha * ir + (1.0 - alpha) * ic;
            let scale = match family {
                ModelFamily::Opt => {
                    let xa = x[j].abs();
                    1.0 * xa.powf(2.5).tanh() * xa.powf(0.7)
                }
                ModelFamily::Llama => x[j].sqrt().powf(1.5),
            };
            out[i][j] = imp * scale;
        }
    }
    out
}
