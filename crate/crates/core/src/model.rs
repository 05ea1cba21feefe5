//! A small pre-norm decoder-only transformer.
//!
//! Blocks are `x + Attn(rms(x))` followed by `x + Down(gelu(Up(rms(x))))`.
//! Normalization is parameter-free and no linear carries a bias, so the
//! prunable weights are exactly the six projection matrices per block.
//! Positions use a learned embedding table.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn;
use crate::{Error, Matrix, Result};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_blocks: 4,
            n_heads: 4,
            d_ff: 128,
            context_len: 64,
            seed: 42,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.d_model, self.n_blocks, self.n_heads, self.d_ff, self.context_len];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size > Token::MAX as usize {
            return Err(Error::InvalidConfig("vocabulary too large".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The prunable projections inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinearKind {
    Q,
    K,
    V,
    O,
    Up,
    Down,
}

impl LinearKind {
    pub const ALL: [LinearKind; 6] = [
        LinearKind::Q,
        LinearKind::K,
        LinearKind::V,
        LinearKind::O,
        LinearKind::Up,
        LinearKind::Down,
    ];

    /// Name relative to the block, e.g. `attn/q`.
    pub fn name(self) -> &'static str {
        match self {
            LinearKind::Q => "attn/q",
            LinearKind::K => "attn/k",
            LinearKind::V => "attn/v",
            LinearKind::O => "attn/o",
            LinearKind::Up => "mlp/up",
            LinearKind::Down => "mlp/down",
        }
    }

    pub fn input_site(self) -> CaptureSite {
        match self {
            LinearKind::Q | LinearKind::K | LinearKind::V => CaptureSite::AttnIn,
            LinearKind::O => CaptureSite::AttnOut,
            LinearKind::Up => CaptureSite::MlpIn,
            LinearKind::Down => CaptureSite::MlpHidden,
        }
    }
}

/// Canonical layer id, `blocks/<i>/<kind>`.
pub fn layer_id(block: usize, kind: LinearKind) -> String {
    format!("blocks/{block}/{}", kind.name())
}

/// Points inside a block whose values feed a prunable linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureSite {
    /// Normalized residual stream entering attention (input to q, k, v).
    AttnIn,
    /// Concatenated head outputs (input to o).
    AttnOut,
    /// Normalized residual stream entering the MLP (input to up).
    MlpIn,
    /// Post-activation hidden units (input to down).
    MlpHidden,
}

/// Inputs to every prunable linear of one block, each `tokens x features`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCapture {
    pub attn_in: Matrix,
    pub attn_out: Matrix,
    pub mlp_in: Matrix,
    pub mlp_hidden: Matrix,
}

impl BlockCapture {
    pub fn at(&self, site: CaptureSite) -> &Matrix {
        match site {
            CaptureSite::AttnIn => &self.attn_in,
            CaptureSite::AttnOut => &self.attn_out,
            CaptureSite::MlpIn => &self.mlp_in,
            CaptureSite::MlpHidden => &self.mlp_hidden,
        }
    }

    pub fn input_of(&self, kind: LinearKind) -> &Matrix {
        self.at(kind.input_site())
    }
}

/// Weights of one transformer block; linears are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    pub up: Matrix,
    pub down: Matrix,
}

impl Block {
    pub fn linear(&self, kind: LinearKind) -> &Matrix {
        match kind {
            LinearKind::Q => &self.q,
            LinearKind::K => &self.k,
            LinearKind::V => &self.v,
            LinearKind::O => &self.o,
            LinearKind::Up => &self.up,
            LinearKind::Down => &self.down,
        }
    }

    pub fn linear_mut(&mut self, kind: LinearKind) -> &mut Matrix {
        match kind {
            LinearKind::Q => &mut self.q,
            LinearKind::K => &mut self.k,
            LinearKind::V => &mut self.v,
            LinearKind::O => &mut self.o,
            LinearKind::Up => &mut self.up,
            LinearKind::Down => &mut self.down,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyModelConfig,
    /// `vocab x d_model`
    pub embed: Matrix,
    /// `context_len x d_model`
    pub pos: Matrix,
    pub blocks: Vec<Block>,
    /// `vocab x d_model`
    pub head: Matrix,
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Result<Matrix> {
        let normal = Normal::new(0.0f64, std).map_err(|_| Error::InvalidConfig("bad init std".into()))?;
        let data = (0..rows * cols).map(|_| normal.sample(&mut self.rng) as f32).collect();
        Matrix::new(rows, cols, data)
    }
}

impl ToyModel {
    /// Seeded random initialization.
    pub fn init(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let mut s = Sampler {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let d = config.d_model as f64;
        let ff = config.d_ff as f64;
        let resid = libm::sqrt(2.0 * config.n_blocks as f64);
        let embed = s.matrix(config.vocab_size, config.d_model, 1.0)?;
        let pos = s.matrix(config.context_len, config.d_model, 0.1)?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            let in_std = 1.0 / libm::sqrt(d);
            blocks.push(Block {
                q: s.matrix(config.d_model, config.d_model, in_std)?,
                k: s.matrix(config.d_model, config.d_model, in_std)?,
                v: s.matrix(config.d_model, config.d_model, in_std)?,
                o: s.matrix(config.d_model, config.d_model, in_std / resid)?,
                up: s.matrix(config.d_ff, config.d_model, in_std)?,
                down: s.matrix(config.d_model, config.d_ff, 1.0 / libm::sqrt(ff) / resid)?,
            });
        }
        let head = s.matrix(config.vocab_size, config.d_model, 0.02)?;
        Ok(Self {
            config,
            embed,
            pos,
            blocks,
            head,
        })
    }

    /// All-zero weights with the shapes implied by `config`.
    pub fn zeros(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let block = Block {
            q: Matrix::zeros(d, d)?,
            k: Matrix::zeros(d, d)?,
            v: Matrix::zeros(d, d)?,
            o: Matrix::zeros(d, d)?,
            up: Matrix::zeros(f, d)?,
            down: Matrix::zeros(d, f)?,
        };
        Ok(Self {
            config,
            embed: Matrix::zeros(v, d)?,
            pos: Matrix::zeros(config.context_len, d)?,
            blocks: alloc::vec![block; config.n_blocks],
            head: Matrix::zeros(v, d)?,
        })
    }

    /// Every tensor under its canonical archive name, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(3 + 6 * self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            for kind in LinearKind::ALL {
                out.push((layer_id(i, kind), b.linear(kind)));
            }
        }
        out.push(("embed".into(), &self.embed));
        out.push(("head".into(), &self.head));
        out.push(("pos".into(), &self.pos));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(3 + 6 * self.blocks.len());
        for b in self.blocks.iter_mut() {
            out.push(&mut b.q);
            out.push(&mut b.k);
            out.push(&mut b.v);
            out.push(&mut b.o);
            out.push(&mut b.up);
            out.push(&mut b.down);
        }
        out.push(&mut self.embed);
        out.push(&mut self.head);
        out.push(&mut self.pos);
        out
    }

    /// Rebuilds a model from canonically named tensors, checking every shape.
    pub fn from_named(config: ToyModelConfig, mut take: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.tensors_mut()) {
            let m = take(name).ok_or_else(|| Error::Shape(format!("missing tensor `{name}`")))?;
            if m.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    slot.rows(),
                    slot.cols()
                )));
            }
            m.ensure_finite().map_err(|e| e.in_layer(name))?;
            *slot = m;
        }
        Ok(model)
    }

    pub fn prunable_count(&self) -> usize {
        self.blocks.len() * LinearKind::ALL.len()
    }

    pub fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyEval);
        }
        if tokens.len() > self.config.context_len {
            return Err(Error::Shape(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.len(),
                self.config.context_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Token {
                token: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Token plus position embeddings, `t x d_model` row-major.
    pub fn embed_tokens(&self, tokens: &[Token]) -> Result<Vec<f32>> {
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let mut x = alloc::vec![0.0f32; tokens.len() * d];
        for (t, (&tok, xr)) in tokens.iter().zip(x.chunks_exact_mut(d)).enumerate() {
            for ((o, e), p) in xr.iter_mut().zip(self.embed.row(tok as usize)).zip(self.pos.row(t)) {
                *o = e + p;
            }
        }
        Ok(x)
    }

    /// Runs block `index` on the residual stream `x` (`t x d_model`),
    /// optionally recording the inputs of its linears.
    pub fn block_forward(&self, index: usize, x: &[f32], capture: Option<&mut Option<BlockCapture>>) -> Vec<f32> {
        let d = self.config.d_model;
        let t = x.len() / d;
        let b = &self.blocks[index];

        let (h, _) = nn::rmsnorm(x, d);
        let q = nn::linear(&h, &b.q);
        let k = nn::linear(&h, &b.k);
        let v = nn::linear(&h, &b.v);
        let (a, _) = nn::attention(&q, &k, &v, t, self.config.n_heads, false);
        let mut x1 = x.to_vec();
        for (r, o) in x1.iter_mut().zip(nn::linear(&a, &b.o)) {
            *r += o;
        }

        let (h2, _) = nn::rmsnorm(&x1, d);
        let mut g = nn::linear(&h2, &b.up);
        g.iter_mut().for_each(|u| *u = nn::gelu(*u));
        for (r, o) in x1.iter_mut().zip(nn::linear(&g, &b.down)) {
            *r += o;
        }

        if let Some(slot) = capture {
            let ff = self.config.d_ff;
            *slot = Some(BlockCapture {
                attn_in: Matrix::new(t, d, h).expect("shape"),
                attn_out: Matrix::new(t, d, a).expect("shape"),
                mlp_in: Matrix::new(t, d, h2).expect("shape"),
                mlp_hidden: Matrix::new(t, ff, g).expect("shape"),
            });
        }
        x1
    }

    /// Final normalization and output head; returns `t x vocab` logits.
    pub fn head_forward(&self, x: &[f32]) -> Matrix {
        let d = self.config.d_model;
        let t = x.len() / d;
        let (h, _) = nn::rmsnorm(x, d);
        Matrix::new(t, self.config.vocab_size, nn::linear(&h, &self.head)).expect("shape")
    }

    pub fn forward(&self, tokens: &[Token]) -> Result<Matrix> {
        let mut x = self.embed_tokens(tokens)?;
        for i in 0..self.blocks.len() {
            x = self.block_forward(i, &x, None);
        }
        Ok(self.head_forward(&x))
    }

    /// Forward pass that also returns the per-block linear inputs.
    pub fn forward_with_capture(&self, tokens: &[Token]) -> Result<(Matrix, Vec<BlockCapture>)> {
        let mut x = self.embed_tokens(tokens)?;
        let mut captures = Vec::with_capacity(self.blocks.len());
        for i in 0..self.blocks.len() {
            let mut slot = None;
            x = self.block_forward(i, &x, Some(&mut slot));
            captures.push(slot.expect("capture requested"));
        }
        Ok((self.head_forward(&x), captures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ToyModelConfig {
        ToyModelConfig {
            vocab_size: 13,
            d_model: 8,
            n_blocks: 2,
            n_heads: 2,
            d_ff: 12,
            context_len: 10,
            seed: 7,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ToyModelConfig::default().validate().is_ok());
        let bad = ToyModelConfig { n_heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn canonical_names() {
        let m = ToyModel::init(tiny()).unwrap();
        let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "blocks/0/attn/q");
        assert_eq!(names[5], "blocks/0/mlp/down");
        assert_eq!(names[11], "blocks/1/mlp/down");
        assert_eq!(&names[12..], &["embed", "head", "pos"]);
    }

    #[test]
    fn from_named_round_trip() {
        let m = ToyModel::init(tiny()).unwrap();
        let tensors = m.named_tensors();
        let rebuilt = ToyModel::from_named(tiny(), |name| {
            tensors.iter().find(|(n, _)| n == name).map(|(_, t)| (*t).clone())
        })
        .unwrap();
        assert_eq!(rebuilt, m);
        assert!(ToyModel::from_named(tiny(), |_| None).is_err());
    }

    #[test]
    fn token_errors() {
        let m = ToyModel::init(tiny()).unwrap();
        assert_eq!(m.forward(&[1, 13]), Err(Error::Token { token: 13, vocab_size: 13 }));
        assert!(m.forward(&[0; 11]).is_err());
        assert!(m.forward(&[]).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ToyModel::zeros(tiny()).unwrap();
        let logits = m.forward(&[1, 2, 3]).unwrap();
        assert!(logits.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn capture_shapes() {
        let m = ToyModel::init(tiny()).unwrap();
        let (logits, caps) = m.forward_with_capture(&[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(logits.shape(), (5, 13));
        assert_eq!(caps.len(), 2);
        assert_eq!(caps[1].input_of(LinearKind::Q).shape(), (5, 8));
        assert_eq!(caps[1].input_of(LinearKind::Down).shape(), (5, 12));
        assert!(logits.bitwise_eq(&m.forward(&[0, 1, 2, 3, 4]).unwrap()));
    }
}
