//! Sparsity sweeps with the grid cells evaluated on a bounded thread pool.

use rayon::prelude::*;
use zprune_core::eval::{evaluate_dense, sweep_cell, SweepSpec, SweepTable};
use zprune_core::model::{Token, ToyModel};
use zprune_core::pruning::Clock;

use crate::error::Result;

/// Same table as the serial sweep, with cells computed concurrently.
///
/// `threads = None` uses every available core. Rows are assembled in grid
/// order, so the result does not depend on scheduling.
pub fn parallel_sweep(
    model: &ToyModel,
    spec: &SweepSpec,
    calib: &[Vec<Token>],
    eval_tokens: &[Token],
    clock: &(dyn Clock + Sync),
    threads: Option<usize>,
) -> Result<SweepTable> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;

    let cells = spec.cells();
    let (dense, rows) = pool.install(|| {
        rayon::join(
            || evaluate_dense(model, &spec.model_tag, eval_tokens, clock),
            || {
                cells
                    .par_iter()
                    .map(|&(method, rho)| sweep_cell(model, spec, method, rho, calib, eval_tokens, clock))
                    .collect::<Vec<_>>()
            },
        )
    });

    let mut table = SweepTable::default();
    table.push(dense?)?;
    for row in rows {
        table.push(row?)?;
    }
    Ok(table)
}
