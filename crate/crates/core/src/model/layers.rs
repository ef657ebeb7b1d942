//! Building blocks: linear layers, layer norm, MLPs, multi-head attention.
//!
//! A layer struct only holds its parameter names and dimensions; tensors live
//! in the [`ParamStore`] and are bound per forward through a [`Session`].
//! There is no dropout anywhere: training at this scale is deterministic by
//! construction.

use super::params::{ParamStore, Session};
use crate::autodiff::{Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Additive bias that drives softmax mass to exactly zero after underflow.
pub const NEG_INF_BIAS: f64 = -1e9;

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(rows, cols, std, rng)
}

/// Dense layer `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(name: impl Into<String>, in_dim: usize, out_dim: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let name = name.into();
        store.insert(format!("{name}.weight"), xavier(in_dim, out_dim, rng));
        store.insert(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Linear { name, in_dim, out_dim }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let w = s.param(&format!("{}.weight", self.name));
        let b = s.param(&format!("{}.bias", self.name));
        let xw = s.tape.matmul(x, w);
        s.tape.add(xw, b)
    }
}

/// Layer normalization over the feature axis with learned scale and shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn init(name: impl Into<String>, dim: usize, store: &mut ParamStore) -> Self {
        let name = name.into();
        store.insert(format!("{name}.gamma"), Tensor::full(1, dim, 1.0));
        store.insert(format!("{name}.beta"), Tensor::zeros(1, dim));
        LayerNorm { name, dim }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let g = s.param(&format!("{}.gamma", self.name));
        let b = s.param(&format!("{}.beta", self.name));
        let n = s.tape.layer_norm_rows(x, 1e-5);
        let scaled = s.tape.mul(n, g);
        s.tape.add(scaled, b)
    }
}

/// Three dense layers with ReLU between them, the head shape used for boxes
/// and explorers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp3 {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl Mlp3 {
    pub fn init(name: &str, in_dim: usize, hidden: usize, out_dim: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        Mlp3 {
            l1: Linear::init(format!("{name}.l1"), in_dim, hidden, store, rng),
            l2: Linear::init(format!("{name}.l2"), hidden, hidden, store, rng),
            l3: Linear::init(format!("{name}.l3"), hidden, out_dim, store, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let h1 = self.l1.forward(s, x);
        let a1 = s.tape.relu(h1);
        let h2 = self.l2.forward(s, a1);
        let a2 = s.tape.relu(h2);
        self.l3.forward(s, a2)
    }
}

/// Two dense layers with ReLU, the transformer feed-forward block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn init(name: &str, dim: usize, hidden: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            l1: Linear::init(format!("{name}.l1"), dim, hidden, store, rng),
            l2: Linear::init(format!("{name}.l2"), hidden, dim, store, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let h = self.l1.forward(s, x);
        let a = s.tape.relu(h);
        self.l2.forward(s, a)
    }
}

/// Value copy of an attention map for inspection, averaged over heads.
#[derive(Debug, Clone)]
pub struct AttnTrace {
    /// `[queries, keys]`, rows sum to 1.
    pub weights: Tensor,
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn init(name: &str, dim: usize, heads: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "hidden dim must divide into heads");
        MultiHeadAttention {
            wq: Linear::init(format!("{name}.wq"), dim, dim, store, rng),
            wk: Linear::init(format!("{name}.wk"), dim, dim, store, rng),
            wv: Linear::init(format!("{name}.wv"), dim, dim, store, rng),
            wo: Linear::init(format!("{name}.wo"), dim, dim, store, rng),
            heads,
            dim,
        }
    }

    /// `query: [Nq, C]`, `key`/`value`: `[Nk, C]`. `key_pad[j]` masks key `j`
    /// out of the softmax entirely.
    pub fn forward(
        &self,
        s: &mut Session,
        query: Var,
        key: Var,
        value: Var,
        key_pad: Option<&[bool]>,
    ) -> (Var, AttnTrace) {
        let nk = s.tape.value(key).rows;
        let nq = s.tape.value(query).rows;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.wq.forward(s, query);
        let k = self.wk.forward(s, key);
        let v = self.wv.forward(s, value);

        let bias = key_pad.map(|pad| {
            assert_eq!(pad.len(), nk, "key pad mask length");
            s.tape.constant(Tensor::from_fn(1, nk, |_, j| {
                if pad[j] {
                    NEG_INF_BIAS
                } else {
                    0.0
                }
            }))
        });

        let mut head_outs = Vec::with_capacity(self.heads);
        let mut trace = Tensor::zeros(nq, nk);
        for h in 0..self.heads {
            let qh = s.tape.slice_cols(q, h * dh, dh);
            let kh = s.tape.slice_cols(k, h * dh, dh);
            let vh = s.tape.slice_cols(v, h * dh, dh);
            let kt = s.tape.transpose(kh);
            let scores = s.tape.matmul(qh, kt);
            let scaled = s.tape.scale(scores, scale);
            let biased = match bias {
                Some(b) => s.tape.add(scaled, b),
                None => scaled,
            };
            let attn = s.tape.softmax_rows(biased);
            trace.add_scaled(s.tape.value(attn), 1.0 / self.heads as f64);
            head_outs.push(s.tape.matmul(attn, vh));
        }
        let ctx = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            s.tape.concat_cols(&head_outs)
        };
        let out = self.wo.forward(s, ctx);
        (out, AttnTrace { weights: trace })
    }
}
