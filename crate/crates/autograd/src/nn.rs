//! Transformer building blocks on top of [`Graph`].
//!
//! Every layer owns only [`ParamId`] handles; values live in a [`ParamStore`]
//! and are read into the graph on each forward pass.

use rand::Rng;

use crate::{AutogradError, Graph, Matrix, ParamId, ParamStore, Var};

/// `y = x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = store.insert_normal(format!("{name}.weight"), in_dim, out_dim, std, rng)?;
        let bias = if bias { Some(store.insert_filled(format!("{name}.bias"), 1, out_dim, 0.0)?) } else { None };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let w = g.param(ps, self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(ps, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self, AutogradError> {
        Ok(Self {
            gain: store.insert_filled(format!("{name}.gain"), 1, dim, 1.0)?,
            bias: store.insert_filled(format!("{name}.bias"), 1, dim, 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm(x);
        let gain = g.param(ps, self.gain);
        let bias = g.param(ps, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Multi-head scaled dot-product attention. Queries come from one token set,
/// keys and values from another (the same one for self-attention).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        assert!(heads > 0 && dim % heads == 0, "model dim {dim} not divisible by {heads} heads");
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, queries: Var, context: Var) -> Var {
        let dim = self.q.out_dim;
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q = self.q.forward(g, ps, queries);
        let k = self.k.forward(g, ps, context);
        let v = self.v.forward(g, ps, context);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * head_dim, head_dim),
                    g.slice_cols(k, h * head_dim, head_dim),
                    g.slice_cols(v, h * head_dim, head_dim),
                )
            };
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.out.forward(g, ps, merged)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, ps, x);
        let h = g.gelu(h);
        self.down.forward(g, ps, h)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Var {
        let h = self.norm1.forward(g, ps, x);
        let a = self.attn.forward(g, ps, h, h);
        let x = g.add(x, a);
        let h = self.norm2.forward(g, ps, x);
        let f = self.ff.forward(g, ps, h);
        g.add(x, f)
    }
}

/// Pre-norm transformer decoder layer without self-attention: the query
/// tokens attend over a separate context, then pass through an MLP.
#[derive(Clone, Debug)]
pub struct CrossAttentionLayer {
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl CrossAttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(Self {
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), dim)?,
            norm_kv: LayerNorm::new(store, &format!("{name}.norm_kv"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden, rng)?,
        })
    }

    /// Returns only the update; callers decide how to combine it with the query.
    pub fn delta(&self, g: &mut Graph, ps: &ParamStore, queries: Var, context: Var) -> Var {
        let q = self.norm_q.forward(g, ps, queries);
        let kv = self.norm_kv.forward(g, ps, context);
        let a = self.attn.forward(g, ps, q, kv);
        let h = self.norm2.forward(g, ps, a);
        let f = self.ff.forward(g, ps, h);
        g.add(a, f)
    }
}

/// Learned lookup table.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(Self { table: store.insert_normal(format!("{name}.table"), count, dim, 0.1, rng)? })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, ids: &[usize]) -> Var {
        let t = g.param(ps, self.table);
        g.gather(t, ids)
    }
}

/// A fresh `rows × dim` table drawn the same way [`Embedding::new`] draws one.
pub fn embedding_init<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Matrix {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 0.1).expect("finite std");
    Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| normal.sample(rng)).collect())
}
