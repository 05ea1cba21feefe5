//! Perplexity, multiple-choice accuracy and sparsity sweeps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Token, ToyModel};
use crate::pruning::{prune_model, Clock, Method, PruneRequest};
use crate::{Error, Matrix, Result};

/// Anything that maps a token prefix to next-token logits.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    /// `tokens.len() x vocab_size` logits; row `t` predicts token `t + 1`.
    fn logits(&self, tokens: &[Token]) -> Result<Matrix>;
}

impl LanguageModel for ToyModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn logits(&self, tokens: &[Token]) -> Result<Matrix> {
        self.forward(tokens)
    }
}

/// Probability assigned to an observed token is never taken below this.
pub const PROB_FLOOR: f64 = 1e-12;

/// Log-probability of `target` under softmax(`row`), computed in `f64`.
/// Returns the value and whether it had to be clamped.
pub fn log_prob(row: &[f32], target: Token) -> (f64, bool) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
    let sum: f64 = row.iter().map(|&x| libm::exp(f64::from(x) - max)).sum();
    let lp = f64::from(row[target as usize]) - max - libm::log(sum);
    if !lp.is_finite() || libm::exp(lp) == 0.0 {
        (libm::log(PROB_FLOOR), true)
    } else {
        (lp, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    pub ppl: f64,
    pub mean_nll: f64,
    /// Number of predicted tokens.
    pub tokens: usize,
    /// Predictions whose probability underflowed and was clamped.
    pub clamped: usize,
    /// Window length used for teacher forcing.
    pub stride: usize,
}

/// Teacher-forced perplexity over non-overlapping windows of the model's
/// context length. Every token after the first is predicted exactly once.
pub fn perplexity<M: LanguageModel + ?Sized>(model: &M, tokens: &[Token]) -> Result<PerplexityReport> {
    if tokens.len() < 2 {
        return Err(Error::EmptyEval);
    }
    let stride = model.context_len();
    if stride == 0 {
        return Err(Error::InvalidConfig("context length must be positive".into()));
    }
    let vocab = model.vocab_size();
    let mut nll = 0.0f64;
    let mut count = 0usize;
    let mut clamped = 0usize;
    let last = tokens.len() - 1;
    let mut start = 0;
    while start < last {
        let end = (start + stride).min(last);
        let logits = model.logits(&tokens[start..end])?;
        if logits.cols() != vocab || logits.rows() != end - start {
            return Err(Error::Shape(format!(
                "model returned {}x{} logits for {} tokens",
                logits.rows(),
                logits.cols(),
                end - start
            )));
        }
        for (row, &target) in logits.as_slice().chunks_exact(vocab).zip(&tokens[start + 1..=end]) {
            let (lp, was_clamped) = log_prob(row, target);
            nll -= lp;
            count += 1;
            clamped += usize::from(was_clamped);
        }
        start = end;
    }
    let mean_nll = nll / count as f64;
    Ok(PerplexityReport {
        ppl: libm::exp(mean_nll),
        mean_nll,
        tokens: count,
        clamped,
        stride,
    })
}

/// A multiple-choice item: pick the best continuation of `context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceItem {
    pub context: Vec<Token>,
    pub candidates: Vec<Vec<Token>>,
    pub gold: usize,
}

/// Mean log-probability per token of `candidate` following `context`.
/// The joined sequence is left-truncated to the context window.
pub fn candidate_score<M: LanguageModel + ?Sized>(model: &M, context: &[Token], candidate: &[Token]) -> Result<f64> {
    if context.is_empty() || candidate.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut seq: Vec<Token> = context.iter().chain(candidate).copied().collect();
    // the last token is only a target
    let window = model.context_len() + 1;
    if seq.len() > window {
        seq.drain(..seq.len() - window);
    }
    if candidate.len() >= seq.len() {
        return Err(Error::Shape("candidate does not fit the context window".into()));
    }
    let logits = model.logits(&seq[..seq.len() - 1])?;
    let first_target = seq.len() - candidate.len();
    let mut total = 0.0f64;
    for (pos, &target) in seq.iter().enumerate().skip(first_target) {
        total += log_prob(logits.row(pos - 1), target).0;
    }
    Ok(total / candidate.len() as f64)
}

/// Index of the highest scoring candidate; the earliest wins ties.
pub fn predict_choice<M: LanguageModel + ?Sized>(model: &M, item: &ChoiceItem) -> Result<usize> {
    if item.candidates.len() < 2 {
        return Err(Error::InvalidConfig("an item needs at least two candidates".into()));
    }
    if item.gold >= item.candidates.len() {
        return Err(Error::InvalidConfig(format!(
            "gold index {} out of range for {} candidates",
            item.gold,
            item.candidates.len()
        )));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, cand) in item.candidates.iter().enumerate() {
        let s = candidate_score(model, &item.context, cand)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Fraction of items whose predicted candidate equals the gold index.
pub fn zero_shot_accuracy<M: LanguageModel + ?Sized>(model: &M, items: &[ChoiceItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut correct = 0usize;
    for item in items {
        if predict_choice(model, item)? == item.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub model_tag: String,
    /// `None` for the dense reference row.
    pub method: Option<Method>,
    pub rho: f64,
    pub ppl: f64,
    pub accuracy: Option<f64>,
    pub tokens_evaluated: usize,
    pub wall_millis: u64,
    pub clamped: usize,
}

impl EvalResult {
    pub fn method_name(&self) -> &'static str {
        self.method.map_or("dense", Method::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<EvalResult>,
}

impl SweepTable {
    pub fn get(&self, method: Option<Method>, rho: f64) -> Option<&EvalResult> {
        self.rows.iter().find(|r| r.method == method && r.rho == rho)
    }

    pub fn dense(&self) -> Option<&EvalResult> {
        self.rows.iter().find(|r| r.method.is_none())
    }

    pub fn push(&mut self, row: EvalResult) -> Result<()> {
        if self.get(row.method, row.rho).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate sweep cell ({}, {})",
                row.method_name(),
                row.rho
            )));
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Grid and shared settings of a sparsity sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub model_tag: String,
    pub methods: Vec<Method>,
    /// Ascending, each in `[0, 1)`.
    pub rhos: Vec<f64>,
    /// Mode, scaling and importance settings; method and rho are overridden
    /// per cell.
    pub base: PruneRequest,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.rhos.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one method and one ratio".into()));
        }
        if self.rhos.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidConfig("sweep ratios must lie in [0, 1)".into()));
        }
        if self.rhos.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("sweep ratios must be strictly ascending".into()));
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                return Err(Error::InvalidConfig(format!("method {} listed twice", m.as_str())));
            }
            seen.push(*m);
        }
        Ok(())
    }

    /// Cells in table order after the dense row.
    pub fn cells(&self) -> Vec<(Method, f64)> {
        self.methods
            .iter()
            .flat_map(|&m| self.rhos.iter().map(move |&r| (m, r)))
            .collect()
    }
}

pub fn evaluate_dense(model: &ToyModel, tag: &str, eval_tokens: &[Token], clock: &dyn Clock) -> Result<EvalResult> {
    let start = clock.now_millis();
    let report = perplexity(model, eval_tokens)?;
    Ok(EvalResult {
        model_tag: tag.into(),
        method: None,
        rho: 0.0,
        ppl: report.ppl,
        accuracy: None,
        tokens_evaluated: report.tokens,
        wall_millis: clock.now_millis().saturating_sub(start),
        clamped: report.clamped,
    })
}

/// Prunes a copy of `model` with `(method, rho)` and measures perplexity.
pub fn sweep_cell(
    model: &ToyModel,
    spec: &SweepSpec,
    method: Method,
    rho: f64,
    calib: &[Vec<Token>],
    eval_tokens: &[Token],
    clock: &dyn Clock,
) -> Result<EvalResult> {
    let start = clock.now_millis();
    let req = PruneRequest {
        method,
        rho,
        ..spec.base
    };
    let outcome = prune_model(model, calib, &req, clock)?;
    let report = perplexity(&outcome.model, eval_tokens)?;
    Ok(EvalResult {
        model_tag: spec.model_tag.clone(),
        method: Some(method),
        rho,
        ppl: report.ppl,
        accuracy: None,
        tokens_evaluated: report.tokens,
        wall_millis: clock.now_millis().saturating_sub(start),
        clamped: report.clamped,
    })
}

/// Dense row followed by every `(method, rho)` cell in declared order.
pub fn sparsity_sweep(
    model: &ToyModel,
    spec: &SweepSpec,
    calib: &[Vec<Token>],
    eval_tokens: &[Token],
    clock: &dyn Clock,
) -> Result<SweepTable> {
    spec.validate()?;
    let mut table = SweepTable::default();
    table.push(evaluate_dense(model, &spec.model_tag, eval_tokens, clock)?)?;
    for (method, rho) in spec.cells() {
        table.push(sweep_cell(model, spec, method, rho, calib, eval_tokens, clock)?)?;
    }
    Ok(table)
}
