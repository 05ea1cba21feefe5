//! Deterministic SGD training of the toy model.
//!
//! Single-threaded, fixed batch order, fixed linear learning-rate decay and
//! global-norm gradient clipping. Two runs with the same inputs produce
//! bitwise-identical weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Token, ToyModel, ToyModelConfig};
use crate::nn::{self, AttentionCache};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per step, each `context_len + 1` tokens.
    pub batch_size: usize,
    pub lr: f32,
    /// Learning rate at the last step as a fraction of `lr`.
    pub final_lr_fraction: f32,
    pub clip_norm: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 0.5,
            final_lr_fraction: 0.1,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f32 {
        if self.steps <= 1 {
            return self.lr;
        }
        let frac = step as f32 / (self.steps - 1) as f32;
        self.lr * (1.0 - frac * (1.0 - self.final_lr_fraction))
    }
}

struct BlockCache {
    h: Vec<f32>,
    inv1: Vec<f32>,
    attn: AttentionCache,
    a: Vec<f32>,
    h2: Vec<f32>,
    inv2: Vec<f32>,
    u: Vec<f32>,
    g: Vec<f32>,
}

/// Summed cross-entropy of `targets` and accumulated gradients (scaled by
/// `grad_scale`) for one sequence.
fn sequence_backprop(
    model: &ToyModel,
    inputs: &[Token],
    targets: &[Token],
    grad_scale: f32,
    grads: &mut ToyModel,
) -> Result<f64> {
    let cfg = &model.config;
    let d = cfg.d_model;
    let t = inputs.len();
    let mut x = model.embed_tokens(inputs)?;

    let mut caches = Vec::with_capacity(model.blocks.len());
    for b in &model.blocks {
        let (h, inv1) = nn::rmsnorm(&x, d);
        let q = nn::linear(&h, &b.q);
        let k = nn::linear(&h, &b.k);
        let v = nn::linear(&h, &b.v);
        let (a, attn) = nn::attention(&q, &k, &v, t, cfg.n_heads, true);
        let mut x1 = x.clone();
        for (r, o) in x1.iter_mut().zip(nn::linear(&a, &b.o)) {
            *r += o;
        }
        let (h2, inv2) = nn::rmsnorm(&x1, d);
        let u = nn::linear(&h2, &b.up);
        let g: Vec<f32> = u.iter().map(|&z| nn::gelu(z)).collect();
        let mut x2 = x1;
        for (r, o) in x2.iter_mut().zip(nn::linear(&g, &b.down)) {
            *r += o;
        }
        x = x2;
        caches.push(BlockCache {
            h,
            inv1,
            attn: attn.expect("cache requested"),
            a,
            h2,
            inv2,
            u,
            g,
        });
    }
    let (hf, invf) = nn::rmsnorm(&x, d);
    let mut dlogits = nn::linear(&hf, &model.head);

    let vocab = cfg.vocab_size;
    let mut loss = 0.0f64;
    for (row, &target) in dlogits.chunks_exact_mut(vocab).zip(targets) {
        nn::softmax(row);
        let p = row[target as usize].max(f32::MIN_POSITIVE);
        loss -= f64::from(libm::logf(p));
        row[target as usize] -= 1.0;
        row.iter_mut().for_each(|g| *g *= grad_scale);
    }

    let dhf = nn::linear_backward(&dlogits, &hf, &model.head, &mut grads.head);
    let mut dx = nn::rmsnorm_backward(&dhf, &hf, &invf, d);

    for (bi, c) in caches.iter().enumerate().rev() {
        let b = &model.blocks[bi];
        let gb = &mut grads.blocks[bi];

        let mut du = nn::linear_backward(&dx, &c.g, &b.down, &mut gb.down);
        for (g, &z) in du.iter_mut().zip(&c.u) {
            *g *= nn::gelu_grad(z);
        }
        let dh2 = nn::linear_backward(&du, &c.h2, &b.up, &mut gb.up);
        for (r, g) in dx.iter_mut().zip(nn::rmsnorm_backward(&dh2, &c.h2, &c.inv2, d)) {
            *r += g;
        }

        let da = nn::linear_backward(&dx, &c.a, &b.o, &mut gb.o);
        let (dq, dk, dv) = nn::attention_backward(&da, &c.attn, t, cfg.n_heads);
        let mut dh = nn::linear_backward(&dq, &c.h, &b.q, &mut gb.q);
        for (r, g) in dh.iter_mut().zip(nn::linear_backward(&dk, &c.h, &b.k, &mut gb.k)) {
            *r += g;
        }
        for (r, g) in dh.iter_mut().zip(nn::linear_backward(&dv, &c.h, &b.v, &mut gb.v)) {
            *r += g;
        }
        for (r, g) in dx.iter_mut().zip(nn::rmsnorm_backward(&dh, &c.h, &c.inv1, d)) {
            *r += g;
        }
    }

    for (pos, (&tok, g)) in inputs.iter().zip(dx.chunks_exact(d)).enumerate() {
        nn::axpy(1.0, g, grads.embed.row_mut(tok as usize));
        nn::axpy(1.0, g, grads.pos.row_mut(pos));
    }
    Ok(loss)
}

/// Mean next-token cross-entropy over a batch of sequences together with
/// its gradient. Each sequence predicts tokens `1..len` from `0..len-1`.
pub fn loss_and_grad(model: &ToyModel, batch: &[&[Token]]) -> Result<(f64, ToyModel)> {
    let mut grads = ToyModel::zeros(model.config)?;
    let predicted: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    if predicted == 0 {
        return Err(Error::Corpus("batch has no next-token targets".into()));
    }
    let scale = 1.0 / predicted as f32;
    let mut total = 0.0f64;
    for seq in batch {
        if seq.len() < 2 {
            continue;
        }
        let (inputs, targets) = (&seq[..seq.len() - 1], &seq[1..]);
        total += sequence_backprop(model, inputs, targets, scale, &mut grads)?;
    }
    Ok((total / predicted as f64, grads))
}

fn global_norm(grads: &mut ToyModel) -> f32 {
    let sq: f64 = grads
        .tensors_mut()
        .into_iter()
        .map(|m| m.as_slice().iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>())
        .sum();
    libm::sqrt(sq) as f32
}

fn sgd_step(model: &mut ToyModel, grads: &mut ToyModel, lr: f32, clip: f32) {
    let norm = global_norm(grads);
    let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
    let step = lr * factor;
    for (p, g) in model.tensors_mut().into_iter().zip(grads.tensors_mut()) {
        for (w, dw) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= step * dw;
        }
    }
}

/// Progress record passed to the training observer.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub step: usize,
    pub loss: f64,
    pub lr: f32,
}

/// Trains from the seeded initialization of `cfg`.
pub fn train_toy(corpus: &[Token], cfg: ToyModelConfig, steps: usize) -> Result<ToyModel> {
    let tc = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    train_toy_with(corpus, cfg, &tc, |_| {})
}

pub fn train_toy_with(
    corpus: &[Token],
    cfg: ToyModelConfig,
    tc: &TrainConfig,
    mut observe: impl FnMut(StepInfo),
) -> Result<ToyModel> {
    cfg.validate()?;
    let window = cfg.context_len + 1;
    if corpus.len() < window {
        return Err(Error::Corpus(format!(
            "corpus of {} tokens is shorter than context_len + 1 = {window}",
            corpus.len()
        )));
    }
    if let Some(&bad) = corpus.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Token {
            token: bad,
            vocab_size: cfg.vocab_size,
        });
    }
    if tc.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }

    let mut model = ToyModel::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7121_A11E));
    let last_start = corpus.len() - window;
    let mut starts = vec![0usize; tc.batch_size];
    for step in 0..tc.steps {
        for s in starts.iter_mut() {
            *s = rng.random_range(0..=last_start);
        }
        let batch: Vec<&[Token]> = starts.iter().map(|&s| &corpus[s..s + window]).collect();
        let (loss, mut grads) = loss_and_grad(&model, &batch)?;
        let lr = tc.lr_at(step);
        sgd_step(&mut model, &mut grads, lr, tc.clip_norm);
        observe(StepInfo { step, loss, lr });
    }
    Ok(model)
}

/// Mean cross-entropy (nats per token) of `model` on fixed windows.
pub fn mean_loss(model: &ToyModel, sequences: &[&[Token]]) -> Result<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        let logits = model.forward(&seq[..seq.len() - 1])?;
        for (row, &target) in logits.as_slice().chunks_exact(model.config.vocab_size).zip(&seq[1..]) {
            let mut r = row.to_vec();
            nn::softmax(&mut r);
            total -= f64::from(libm::logf(r[target as usize].max(f32::MIN_POSITIVE)));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(total / count as f64)
}
