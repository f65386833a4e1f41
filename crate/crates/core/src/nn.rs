//! Transformer building blocks over batches of token sequences.
//!
//! A batch of `B` sequences of `n` tokens is carried as one stacked
//! `[B·n, d]` matrix so that per-token layers run as a single matmul;
//! attention slices out each sequence.

use mmsurv_autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Uniform `(−1/√fan_in, 1/√fan_in)` initializer.
pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dimensions")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, input, output, input));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_init(rng, 1, output, input)));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        Ok(match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)?
            }
            None => y,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(1, width, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        Ok(g.layer_norm(x, gain, bias, Self::EPS)?)
    }
}

/// Stacked batch of equal-length sequences.
#[derive(Debug, Clone, Copy)]
pub struct Seq {
    pub var: Var,
    /// Tokens per sequence.
    pub len: usize,
}

impl Seq {
    pub fn new(var: Var, len: usize) -> Self {
        Self { var, len }
    }

    pub fn batch(&self, g: &Graph) -> usize {
        g.shape(self.var)[0] / self.len
    }
}

/// Multi-head scaled dot-product attention. Query, key and value
/// projections carry no bias; the output projection does.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(CoreError::Config(format!("width {width} not divisible into {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, rng, &format!("{name}.q"), width, width, false),
            key: Linear::new(store, rng, &format!("{name}.k"), width, width, false),
            value: Linear::new(store, rng, &format!("{name}.v"), width, width, false),
            output: Linear::new(store, rng, &format!("{name}.o"), width, width, true),
            heads,
        })
    }

    /// Queries from `queries`; keys and values from the per-sequence
    /// concatenation of `sources` along the token axis.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, queries: Seq, sources: &[Seq]) -> Result<Var> {
        let batch = queries.batch(g);
        let width = g.shape(queries.var)[1];
        for s in sources {
            if g.shape(s.var)[1] != width {
                return Err(CoreError::Shape(format!("key width {} vs query width {width}", g.shape(s.var)[1])));
            }
            if s.batch(g) != batch {
                return Err(CoreError::Shape(format!("batch {} vs {batch}", s.batch(g))));
            }
        }
        let dk = width / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.query.forward(g, store, queries.var)?;
        let kv: Vec<(Var, Var, usize)> = sources
            .iter()
            .map(|s| Ok((self.key.forward(g, store, s.var)?, self.value.forward(g, store, s.var)?, s.len)))
            .collect::<Result<_>>()?;

        let mut rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = g.slice_rows(q, b * queries.len, (b + 1) * queries.len)?;
            let mut ks = Vec::with_capacity(kv.len());
            let mut vs = Vec::with_capacity(kv.len());
            for &(k, v, n) in &kv {
                ks.push(g.slice_rows(k, b * n, (b + 1) * n)?);
                vs.push(g.slice_rows(v, b * n, (b + 1) * n)?);
            }
            let (kb, vb) = if ks.len() == 1 {
                (ks[0], vs[0])
            } else {
                (g.concat_rows(&ks)?, g.concat_rows(&vs)?)
            };
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (lo, hi) = (h * dk, (h + 1) * dk);
                let (qh, kh, vh) = if self.heads == 1 {
                    (qb, kb, vb)
                } else {
                    (g.slice_cols(qb, lo, hi)?, g.slice_cols(kb, lo, hi)?, g.slice_cols(vb, lo, hi)?)
                };
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale)?;
                let weights = g.softmax_rows(scores)?;
                heads.push(g.matmul(weights, vh)?);
            }
            rows.push(if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? });
        }
        let joined = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        self.output.forward(g, store, joined)
    }
}

/// `LN(x + MHA(x, sources))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), width, heads)?,
            norm: LayerNorm::new(store, &format!("{name}.attn_ln"), width),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Seq, sources: &[Seq]) -> Result<Seq> {
        let a = self.attention.forward(g, store, x, sources)?;
        let r = g.add(x.var, a)?;
        Ok(Seq::new(self.norm.forward(g, store, r)?, x.len))
    }
}

/// `LN(x + W₂·GELU(W₁x))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForwardBlock {
    pub inner: Linear,
    pub outer: Linear,
    pub norm: LayerNorm,
}

impl FeedForwardBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::new(store, rng, &format!("{name}.ff1"), width, hidden, true),
            outer: Linear::new(store, rng, &format!("{name}.ff2"), hidden, width, true),
            norm: LayerNorm::new(store, &format!("{name}.ff_ln"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Seq) -> Result<Seq> {
        let h = self.inner.forward(g, store, x.var)?;
        let h = g.gelu(h)?;
        let h = self.outer.forward(g, store, h)?;
        let r = g.add(x.var, h)?;
        Ok(Seq::new(self.norm.forward(g, store, r)?, x.len))
    }
}

/// Self-attention followed by a feed-forward block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub attention: AttentionBlock,
    pub feed_forward: FeedForwardBlock,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: AttentionBlock::new(store, rng, name, width, heads)?,
            feed_forward: FeedForwardBlock::new(store, rng, name, width, 2 * width),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Seq) -> Result<Seq> {
        let a = self.attention.forward(g, store, x, &[x])?;
        self.feed_forward.forward(g, store, a)
    }
}

/// Softmax-weighted sum of each sequence's tokens against a learned query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionPool {
    pub query: ParamId,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize) -> Self {
        Self {
            query: store.add(format!("{name}.query"), uniform_init(rng, width, 1, width)),
        }
    }

    /// `[B·n, d]` → `[B, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Seq) -> Result<Var> {
        let batch = x.batch(g);
        let width = g.shape(x.var)[1];
        let q = g.param(store, self.query);
        let scores = g.matmul(x.var, q)?;
        let scores = g.scale(scores, 1.0 / (width as f64).sqrt())?;
        let scores = g.reshape(scores, vec![batch, x.len])?;
        let weights = g.softmax_rows(scores)?;
        let mut pooled = Vec::with_capacity(batch);
        for b in 0..batch {
            let w = g.slice_rows(weights, b, b + 1)?;
            let tokens = g.slice_rows(x.var, b * x.len, (b + 1) * x.len)?;
            pooled.push(g.matmul(w, tokens)?);
        }
        Ok(if pooled.len() == 1 { pooled[0] } else { g.concat_rows(&pooled)? })
    }
}
