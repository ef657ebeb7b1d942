//! Query decoder stack shared by the instance branch and the context
//! extractor, plus their prediction heads.
//!
//! Both branches run the same architecture: per layer, self-attention over
//! the queries, cross-attention into the visual memory, then a feed-forward
//! block, all post-norm. Queries carry two embeddings: learned content (the
//! decoder input) and a learned positional guided embedding added to
//! attention queries and keys at every layer. Padded queries are masked out
//! of self-attention keys and their rows are zeroed after every layer, so a
//! padded query can never leak into an active one.

use super::bundle::{mask_column, FeatureBundle};
use super::encoder::VisualMemory;
use super::layers::{AttnTrace, FeedForward, LayerNorm, Linear, Mlp3, MultiHeadAttention};
use super::params::{ParamStore, Session};
use crate::autodiff::Var;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
    norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn init(name: &str, dim: usize, heads: usize, ffn: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::init(&format!("{name}.self_attn"), dim, heads, store, rng),
            norm1: LayerNorm::init(format!("{name}.norm1"), dim, store),
            cross_attn: MultiHeadAttention::init(&format!("{name}.cross_attn"), dim, heads, store, rng),
            norm2: LayerNorm::init(format!("{name}.norm2"), dim, store),
            ffn: FeedForward::init(&format!("{name}.ffn"), dim, ffn, store, rng),
            norm3: LayerNorm::init(format!("{name}.norm3"), dim, store),
        }
    }

    fn forward(
        &self,
        s: &mut Session,
        x: Var,
        p: Var,
        mem: &VisualMemory,
        query_pad: Option<&[bool]>,
    ) -> (Var, AttnTrace) {
        let q = s.tape.add(x, p);
        let (sa, _) = self.self_attn.forward(s, q, q, x, query_pad);
        let r1 = s.tape.add(x, sa);
        let x = self.norm1.forward(s, r1);

        let q2 = s.tape.add(x, p);
        let k2 = s.tape.add(mem.z, mem.pos);
        let (ca, trace) = self.cross_attn.forward(s, q2, k2, mem.z, None);
        let r2 = s.tape.add(x, ca);
        let x = self.norm2.forward(s, r2);

        let f = self.ffn.forward(s, x);
        let r3 = s.tape.add(x, f);
        (self.norm3.forward(s, r3), trace)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
}

impl DecoderStack {
    pub fn init(name: &str, dim: usize, heads: usize, ffn: usize, depth: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        DecoderStack {
            layers: (0..depth)
                .map(|i| DecoderLayer::init(&format!("{name}.layer{i}"), dim, heads, ffn, store, rng))
                .collect(),
        }
    }

    /// Runs the stack and returns the feature bundle plus one cross-attention
    /// trace per layer.
    pub fn forward(
        &self,
        s: &mut Session,
        content: Var,
        p: Var,
        mem: &VisualMemory,
        pad_mask: &[bool],
    ) -> (FeatureBundle, Vec<AttnTrace>) {
        let any_pad = pad_mask.iter().any(|&b| b);
        let mask = any_pad.then(|| s.tape.constant(mask_column(pad_mask)));

        let mut x = match mask {
            Some(m) => s.tape.mul(content, m),
            None => content,
        };
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, trace) = layer.forward(s, x, p, mem, any_pad.then_some(pad_mask));
            x = match mask {
                Some(m) => s.tape.mul(y, m),
                None => y,
            };
            per_layer.push(x);
            traces.push(trace);
        }
        let bundle = FeatureBundle {
            z: x,
            per_layer,
            p,
            pad_mask: pad_mask.to_vec(),
        };
        (bundle, traces)
    }
}

/// Instance branch output: the 2-rows-per-pair feature bundle and per-pair
/// head predictions.
#[derive(Debug, Clone)]
pub struct InstanceOutput {
    pub bundle: FeatureBundle,
    /// `[N_q, 2C]` concatenated pair features feeding the heads.
    pub pair_features: Var,
    /// `[N_q, 4]` human boxes in center-size form, sigmoid range.
    pub b_h: Var,
    /// `[N_q, 4]` object boxes.
    pub b_o: Var,
    /// `[N_q, N_o + 1]` object-class logits, last column is no-object.
    pub c_o: Var,
    pub traces: Vec<AttnTrace>,
}

/// Decoder over `2 N_q` instance queries with pairwise box and class heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceBranch {
    pub stack: DecoderStack,
    pub head_bh: Mlp3,
    pub head_bo: Mlp3,
    pub head_co: Linear,
    pub queries: usize,
}

impl InstanceBranch {
    pub fn init(dim: usize, heads: usize, ffn: usize, depth: usize, queries: usize, n_obj: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        InstanceBranch {
            stack: DecoderStack::init("instance", dim, heads, ffn, depth, store, rng),
            head_bh: Mlp3::init("instance.head_bh", 2 * dim, dim, 4, store, rng),
            head_bo: Mlp3::init("instance.head_bo", 2 * dim, dim, 4, store, rng),
            head_co: Linear::init("instance.head_co", 2 * dim, n_obj + 1, store, rng),
            queries,
        }
    }

    pub fn forward(
        &self,
        s: &mut Session,
        mem: &VisualMemory,
        content: Var,
        p: Var,
        pad_mask: &[bool],
    ) -> InstanceOutput {
        assert_eq!(pad_mask.len(), 2 * self.queries);
        let (bundle, traces) = self.stack.forward(s, content, p, mem, pad_mask);

        let even: Vec<usize> = (0..self.queries).map(|k| 2 * k).collect();
        let odd: Vec<usize> = (0..self.queries).map(|k| 2 * k + 1).collect();
        let ze = s.tape.gather_rows(bundle.z, &even);
        let zo = s.tape.gather_rows(bundle.z, &odd);
        let pair_features = s.tape.concat_cols(&[ze, zo]);

        let bh_logit = self.head_bh.forward(s, pair_features);
        let b_h = s.tape.sigmoid(bh_logit);
        let bo_logit = self.head_bo.forward(s, pair_features);
        let b_o = s.tape.sigmoid(bo_logit);
        let c_o = self.head_co.forward(s, pair_features);

        InstanceOutput {
            bundle,
            pair_features,
            b_h,
            b_o,
            c_o,
            traces,
        }
    }
}

/// Context extractor output: features plus predicted context region boxes.
#[derive(Debug, Clone)]
pub struct ContextOutput {
    pub bundle: FeatureBundle,
    /// `[N_q, 4]` context boxes, padded rows exactly zero.
    pub b_c: Var,
    pub traces: Vec<AttnTrace>,
}

/// Decoder over `N_q` context queries; same architecture as the instance
/// branch, one box head, no class head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextBranch {
    pub stack: DecoderStack,
    pub head_bc: Mlp3,
    pub queries: usize,
}

impl ContextBranch {
    pub fn init(dim: usize, heads: usize, ffn: usize, depth: usize, queries: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        ContextBranch {
            stack: DecoderStack::init("context", dim, heads, ffn, depth, store, rng),
            head_bc: Mlp3::init("context.head_bc", dim, dim, 4, store, rng),
            queries,
        }
    }

    pub fn forward(
        &self,
        s: &mut Session,
        mem: &VisualMemory,
        content: Var,
        p: Var,
        pad_mask: &[bool],
    ) -> ContextOutput {
        assert_eq!(pad_mask.len(), self.queries);
        let (bundle, traces) = self.stack.forward(s, content, p, mem, pad_mask);
        let bc_logit = self.head_bc.forward(s, bundle.z);
        let raw = s.tape.sigmoid(bc_logit);
        let b_c = if pad_mask.iter().any(|&b| b) {
            let m = s.tape.constant(mask_column(pad_mask));
            s.tape.mul(raw, m)
        } else {
            raw
        };
        ContextOutput { bundle, b_c, traces }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::encoder::{Encoder, PixelImage};
    use crate::rng::{self, streams};
    use rand::Rng;

    struct Fixture {
        store: ParamStore,
        enc: Encoder,
        ins: InstanceBranch,
        ctx: ContextBranch,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, streams::INIT);
        let enc = Encoder::init(16, 2, 32, 1, 8, &mut store, &mut r);
        let ins = InstanceBranch::init(16, 2, 32, 2, 4, 5, &mut store, &mut r);
        let ctx = ContextBranch::init(16, 2, 32, 2, 4, &mut store, &mut r);
        store.insert("queries.q_ins", Tensor::randn(8, 16, 1.0, &mut r));
        store.insert("queries.p_ins", Tensor::randn(8, 16, 1.0, &mut r));
        store.insert("queries.q_c", Tensor::randn(4, 16, 1.0, &mut r));
        store.insert("queries.p_c", Tensor::randn(4, 16, 1.0, &mut r));
        Fixture { store, enc, ins, ctx }
    }

    fn image(seed: u64) -> PixelImage {
        let mut rng = rng::stream(seed, streams::SYNTH);
        let mut img = PixelImage::new(32, 32);
        for v in img.data.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn instance_branch_shapes() {
        let f = fixture(21);
        let mut s = Session::new(&f.store);
        let mem = f.enc.forward(&mut s, &image(1)).unwrap();
        let q = s.param("queries.q_ins");
        let p = s.param("queries.p_ins");
        let out = f.ins.forward(&mut s, &mem, q, p, &[false; 8]);
        assert_eq!(s.tape.value(out.b_h).shape(), (4, 4));
        assert_eq!(s.tape.value(out.b_o).shape(), (4, 4));
        assert_eq!(s.tape.value(out.c_o).shape(), (4, 6));
        assert_eq!(s.tape.value(out.pair_features).shape(), (4, 32));
        assert_eq!(out.bundle.per_layer.len(), 2);
        assert_eq!(s.tape.value(out.bundle.z).shape(), (8, 16));
        for &v in &s.tape.value(out.b_h).data {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn context_branch_shapes_and_box_range() {
        let f = fixture(22);
        let mut s = Session::new(&f.store);
        let mem = f.enc.forward(&mut s, &image(2)).unwrap();
        let q = s.param("queries.q_c");
        let p = s.param("queries.p_c");
        let out = f.ctx.forward(&mut s, &mem, q, p, &[false; 4]);
        assert_eq!(s.tape.value(out.b_c).shape(), (4, 4));
        for &v in &s.tape.value(out.b_c).data {
            assert!(v > 0.0 && v < 1.0);
        }
        assert_eq!(out.traces.len(), 2);
        assert_eq!(out.traces[0].weights.shape(), (4, 16));
    }

    #[test]
    fn same_architecture_modulo_query_count() {
        // parameter-shape multiset of the two stacks must agree
        let f = fixture(23);
        let mut ins_shapes: Vec<(usize, usize)> = f
            .store
            .iter()
            .filter(|(k, _)| k.starts_with("instance.layer"))
            .map(|(_, v)| v.shape())
            .collect();
        let mut ctx_shapes: Vec<(usize, usize)> = f
            .store
            .iter()
            .filter(|(k, _)| k.starts_with("context.layer"))
            .map(|(_, v)| v.shape())
            .collect();
        ins_shapes.sort_unstable();
        ctx_shapes.sort_unstable();
        assert!(!ins_shapes.is_empty());
        assert_eq!(ins_shapes, ctx_shapes);
    }

    #[test]
    fn padded_queries_stay_zero_and_do_not_leak() {
        let f = fixture(24);
        let img = image(3);
        let pad = [false, false, true, true];

        let run = |poison: f64| {
            let mut s = Session::new(&f.store);
            let mem = f.enc.forward(&mut s, &img).unwrap();
            let q0 = s.param("queries.q_c");
            // overwrite padded-query content with garbage to prove isolation
            let mut qt = s.tape.value(q0).clone();
            for k in 2..4 {
                for j in 0..16 {
                    qt.set(k, j, poison);
                }
            }
            let q = s.tape.leaf(qt);
            let p = s.param("queries.p_c");
            let out = f.ctx.forward(&mut s, &mem, q, p, &pad);
            (
                s.tape.value(out.bundle.z).clone(),
                s.tape.value(out.b_c).clone(),
            )
        };

        let (z1, b1) = run(0.0);
        let (z2, b2) = run(1e6);
        assert_eq!(z1.data, z2.data, "padded garbage leaked into features");
        assert_eq!(b1.data, b2.data);
        for k in 2..4 {
            assert!(z1.row_slice(k).iter().all(|&v| v == 0.0));
            assert!(b1.row_slice(k).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn query_permutation_equivariance() {
        // permuting query content+position rows permutes outputs the same way
        let f = fixture(25);
        let img = image(4);
        let perm = [2usize, 0, 3, 1];

        let run = |permute: bool| {
            let mut s = Session::new(&f.store);
            let mem = f.enc.forward(&mut s, &img).unwrap();
            let q0 = s.param("queries.q_c");
            let p0 = s.param("queries.p_c");
            let (q, p) = if permute {
                (s.tape.gather_rows(q0, &perm), s.tape.gather_rows(p0, &perm))
            } else {
                (q0, p0)
            };
            let out = f.ctx.forward(&mut s, &mem, q, p, &[false; 4]);
            s.tape.value(out.b_c).clone()
        };

        let base = run(false);
        let permuted = run(true);
        for (k, &src) in perm.iter().enumerate() {
            let a = permuted.row_slice(k);
            let b = base.row_slice(src);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "row {k} differs from source {src}");
            }
        }
    }

    #[test]
    fn outputs_finite_across_seeds() {
        for seed in 0..20 {
            let f = fixture(100 + seed);
            let mut s = Session::new(&f.store);
            let mem = f.enc.forward(&mut s, &image(200 + seed)).unwrap();
            let q = s.param("queries.q_ins");
            let p = s.param("queries.p_ins");
            let out = f.ins.forward(&mut s, &mem, q, p, &[false; 8]);
            assert!(s.tape.value(out.b_h).is_finite());
            assert!(s.tape.value(out.b_o).is_finite());
            assert!(s.tape.value(out.c_o).is_finite());
        }
    }
}
