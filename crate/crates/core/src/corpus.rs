//! Seeded synthetic text: an order-1 Markov chain over the vocabulary.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::model::Token;
use crate::{Error, Result};

pub const DEFAULT_VOCAB: usize = 256;
pub const DEFAULT_BRANCHING: usize = 8;

/// Sparse transition table: each state has `branching` distinct successors
/// with Zipf-like weights `1/(rank+1)`.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    vocab_size: usize,
    successors: Vec<Vec<(Token, f64)>>,
    samplers: Vec<WeightedIndex<f64>>,
}

impl MarkovChain {
    pub fn new(seed: u64, vocab_size: usize, branching: usize) -> Result<Self> {
        if vocab_size == 0 || branching == 0 || branching > vocab_size {
            return Err(Error::Corpus(format!(
                "branching {branching} must lie in 1..={vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm: f64 = (0..branching).map(|r| 1.0 / (r + 1) as f64).sum();
        let mut successors = Vec::with_capacity(vocab_size);
        let mut samplers = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            let picks = rand::seq::index::sample(&mut rng, vocab_size, branching);
            let row: Vec<(Token, f64)> = picks
                .into_iter()
                .enumerate()
                .map(|(rank, s)| (s as Token, 1.0 / (rank + 1) as f64 / norm))
                .collect();
            let sampler = WeightedIndex::new(row.iter().map(|(_, p)| *p))
                .map_err(|e| Error::Corpus(format!("{e}")))?;
            successors.push(row);
            samplers.push(sampler);
        }
        Ok(Self {
            vocab_size,
            successors,
            samplers,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `P(next | current)` from the table.
    pub fn probability(&self, current: Token, next: Token) -> f64 {
        self.successors[current as usize]
            .iter()
            .find(|(s, _)| *s == next)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn successors(&self, current: Token) -> &[(Token, f64)] {
        &self.successors[current as usize]
    }

    /// Entropy of the next token given the current one, in nats. Every row
    /// shares the same weight profile, so this is also the entropy rate and
    /// the floor for any model's log-perplexity.
    pub fn conditional_entropy(&self) -> f64 {
        -self.successors[0].iter().map(|(_, p)| p * libm::log(*p)).sum::<f64>()
    }

    pub fn generate(&self, rng: &mut impl Rng, length: usize) -> Vec<Token> {
        let mut out = Vec::with_capacity(length);
        if length == 0 {
            return out;
        }
        let mut state = rng.random_range(0..self.vocab_size);
        out.push(state as Token);
        while out.len() < length {
            let k = self.samplers[state].sample(rng);
            state = self.successors[state][k].0 as usize;
            out.push(state as Token);
        }
        out
    }
}

/// Deterministic token stream of `length` tokens over the default vocabulary.
pub fn synth_corpus(seed: u64, length: usize) -> Result<Vec<Token>> {
    if length == 0 {
        return Err(Error::Corpus("corpus length must be positive".into()));
    }
    let chain = MarkovChain::new(seed, DEFAULT_VOCAB, DEFAULT_BRANCHING)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE_u64);
    Ok(chain.generate(&mut rng, length))
}

/// A stream split into disjoint train / calibration / evaluation shards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusShards {
    pub train: Vec<Token>,
    pub calib: Vec<Token>,
    pub eval: Vec<Token>,
}

/// Takes the last `eval_len` tokens for evaluation, the `calib_len` before
/// them for calibration, and everything earlier for training.
pub fn split_shards(stream: &[Token], calib_len: usize, eval_len: usize) -> Result<CorpusShards> {
    let tail = calib_len + eval_len;
    if tail >= stream.len() {
        return Err(Error::Corpus(format!(
            "stream of {} tokens cannot hold {calib_len} calibration and {eval_len} evaluation tokens",
            stream.len()
        )));
    }
    let cut_eval = stream.len() - eval_len;
    let cut_calib = cut_eval - calib_len;
    Ok(CorpusShards {
        train: stream[..cut_calib].to_vec(),
        calib: stream[cut_calib..cut_eval].to_vec(),
        eval: stream[cut_eval..].to_vec(),
    })
}

/// Consecutive non-overlapping windows of `len` tokens, at most `count`.
pub fn windows(tokens: &[Token], count: usize, len: usize) -> Vec<Vec<Token>> {
    if len == 0 {
        return Vec::new();
    }
    tokens.chunks_exact(len).take(count).map(|c| c.to_vec()).collect()
}
