//! The synthetic data recipe shared by the fixture and `--seed`-driven runs.

use zprune_core::corpus::{split_shards, synth_corpus, windows};
use zprune_core::model::Token;

use crate::error::Result;

pub const SYNTH_LENGTH: usize = 300_000;
pub const CALIB_SEQUENCES: usize = 128;
pub const EVAL_TOKENS: usize = 16_384;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthData {
    pub train: Vec<Token>,
    pub calib: Vec<Vec<Token>>,
    pub eval: Vec<Token>,
}

/// `SYNTH_LENGTH` tokens from the seeded chain: the tail holds
/// `EVAL_TOKENS` evaluation tokens, the `CALIB_SEQUENCES` windows of
/// `context_len` before it are calibration, the rest is training text.
pub fn synth_data(seed: u64, context_len: usize) -> Result<SynthData> {
    let stream = synth_corpus(seed, SYNTH_LENGTH)?;
    let shards = split_shards(&stream, CALIB_SEQUENCES * context_len, EVAL_TOKENS)?;
    Ok(SynthData {
        calib: windows(&shards.calib, CALIB_SEQUENCES, context_len),
        train: shards.train,
        eval: shards.eval,
    })
}
