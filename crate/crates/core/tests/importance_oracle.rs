//! The importance metric checked against a plain loop-by-loop re-derivation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zprune_core::activation::{llama_scale, opt_scale, ActivationStats, ModelFamily, ScalingParams};
use zprune_core::pruning::{zpruner_metric, Method, PruneMode, PruneRequest};
use zprune_core::Matrix;

mod support;
use support::reference_metric::oracle;

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = rng.random_range(1..=16);
    let n = rng.random_range(1..=16);
    let spread = 10f64.powf(rng.random_range(-2.0..2.0));
    let w = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| f64::from((rng.random_range(-1.0..1.0) * spread) as f32))
                .collect()
        })
        .collect();
    let x = (0..n)
        .map(|_| f64::from(rng.random_range(0.0f32..5.0)))
        .collect();
    (w, x)
}

fn check_case(w: &[Vec<f64>], x: &[f64], family: ModelFamily) -> f64 {
    let mat = Matrix::from_fn(w.len(), w[0].len(), |i, j| w[i][j] as f32).unwrap();
    let stats = ActivationStats::new(x.iter().map(|&v| v as f32).collect(), 10, "t").unwrap();
    let req = PruneRequest::new(Method::ZPruner, 0.5, PruneMode::PerNeuron, ScalingParams::for_family(family));
    let got = zpruner_metric(&mat, &stats, &req).unwrap();
    let want = oracle(w, x, family);
    let mut worst = 0.0f64;
    for (i, row) in want.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            let g = f64::from(got.get(i, j));
            let err = (g - e).abs() / e.abs().max(1e-12);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn matches_reference_on_random_matrices() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA160_0001);
    for case in 0..100 {
        let (w, x) = random_case(&mut rng);
        for family in [ModelFamily::Llama, ModelFamily::Opt] {
            let err = check_case(&w, &x, family);
            assert!(err <= 1e-5, "case {case} ({}): relative error {err:e}", family.as_str());
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn degenerate_shapes_match_reference() {
    let cases: Vec<Vec<Vec<f64>>> = vec![
        vec![vec![3.0]],
        vec![vec![1.0, -2.0, 0.0, 4.0]],
        vec![vec![1.0], vec![0.5], vec![-0.25]],
        vec![vec![0.0, 0.0], vec![0.0, 1.0]],
    ];
    for w in cases {
        let x = vec![2.0; w[0].len()];
        for family in [ModelFamily::Llama, ModelFamily::Opt] {
            assert!(check_case(&w, &x, family) <= 1e-5);
        }
    }
}

#[test]
fn scaling_defaults() {
    assert!((opt_scale(1.0, &ScalingParams::opt()) - 1f64.tanh()).abs() <= 1e-4);
    assert!((llama_scale(4.0, &ScalingParams::llama()).unwrap() - 2.8284).abs() <= 1e-4);
}
