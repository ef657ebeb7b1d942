//! Multi-branch context aggregation. One decoder stack processes three
//! streams (instance, context, teacher) that all start from the same
//! aggregation queries; every sublayer's parameters are shared across the
//! streams, so the only difference between them is which key/value source
//! each cross-attention reads. The streams stay separate until the final
//! channel concatenation that feeds the interaction head.

use crate::autodiff::{Tensor, Var};
use crate::model::layers::{
    AttnTrace, FeedForward, LayerNorm, Linear, MultiHeadAttention,
};
use crate::model::params::{ParamStore, Session};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A key/value source for one aggregation stream. A disabled branch is an
/// all-zero source: attention over zero keys is uniform and returns zero
/// values, so the stream carries no source signal but still trains its
/// query pathway.
pub struct KvSource {
    pub z: Var,
    pub pad: Option<Vec<bool>>,
}

impl KvSource {
    pub fn active(z: Var, pad: Option<Vec<bool>>) -> Self {
        KvSource { z, pad }
    }

    /// Zero rows standing in for a branch that is switched off.
    pub fn disabled(s: &mut Session, rows: usize, dim: usize) -> Self {
        KvSource {
            z: s.tape.constant(Tensor::zeros(rows.max(1), dim)),
            pad: None,
        }
    }

    /// Drops a pad mask that masks nothing; replaces a fully padded source
    /// with zeros so the attention softmax never sees an all-masked row.
    fn normalized(self, s: &mut Session) -> Self {
        match &self.pad {
            Some(p) if p.iter().all(|&b| b) => {
                let (rows, dim) = {
                    let t = s.tape.value(self.z);
                    (t.rows, t.cols)
                };
                KvSource::disabled(s, rows, dim)
            }
            Some(p) if !p.iter().any(|&b| b) => KvSource { z: self.z, pad: None },
            _ => self,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatorLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl AggregatorLayer {
    pub fn init(
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        AggregatorLayer {
            self_attn: MultiHeadAttention::init(&format!("{name}.self_attn"), dim, heads, store, rng),
            norm1: LayerNorm::init(format!("{name}.norm1"), dim, store),
            cross_attn: MultiHeadAttention::init(&format!("{name}.cross_attn"), dim, heads, store, rng),
            norm2: LayerNorm::init(format!("{name}.norm2"), dim, store),
            ffn: FeedForward::init(&format!("{name}.ffn"), dim, ffn_hidden, store, rng),
            norm3: LayerNorm::init(format!("{name}.norm3"), dim, store),
        }
    }

    /// One post-norm block for a single stream against its source.
    fn forward_stream(
        &self,
        s: &mut Session,
        x: Var,
        pos: Var,
        source: &KvSource,
    ) -> (Var, AttnTrace) {
        let q = s.tape.add(x, pos);
        let (sa, _) = self.self_attn.forward(s, q, q, x, None);
        let r1 = s.tape.add(x, sa);
        let h1 = self.norm1.forward(s, r1);

        let hq = s.tape.add(h1, pos);
        let (ca, trace) =
            self.cross_attn
                .forward(s, hq, source.z, source.z, source.pad.as_deref());
        let r2 = s.tape.add(h1, ca);
        let h2 = self.norm2.forward(s, r2);

        let ff = self.ffn.forward(s, h2);
        let r3 = s.tape.add(h2, ff);
        (self.norm3.forward(s, r3), trace)
    }
}

/// Fused representation and interaction logits.
pub struct AggregatedFeature {
    pub z_ins_hat: Var,
    pub z_c_hat: Var,
    pub z_vlm_hat: Var,
    /// `[N_q, 3C]`, channel order: instance, context, teacher.
    pub fused: Var,
    /// `[N_q, N_hoi]` interaction logits.
    pub c_hoi: Var,
    /// Cross-attention maps per stream, outer index = stream
    /// (instance, context, teacher), inner = layer.
    pub traces: [Vec<AttnTrace>; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextAggregator {
    pub layers: Vec<AggregatorLayer>,
    pub head: Linear,
    pub queries: usize,
    pub dim: usize,
}

impl ContextAggregator {
    pub fn init(
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        n_layers: usize,
        queries: usize,
        n_hoi: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                AggregatorLayer::init(&format!("aggregator.layer{i}"), dim, heads, ffn_hidden, store, rng)
            })
            .collect();
        ContextAggregator {
            layers,
            head: Linear::init("aggregator.head", 3 * dim, n_hoi, store, rng),
            queries,
            dim,
        }
    }

    pub fn aggregate(
        &self,
        s: &mut Session,
        q_agg: Var,
        p_agg: Var,
        instance: KvSource,
        context: KvSource,
        teacher: KvSource,
    ) -> AggregatedFeature {
        assert_eq!(s.tape.value(q_agg).shape(), (self.queries, self.dim));
        let sources = [
            instance.normalized(s),
            context.normalized(s),
            teacher.normalized(s),
        ];
        let mut streams = [q_agg, q_agg, q_agg];
        let mut traces: [Vec<AttnTrace>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for layer in &self.layers {
            for (i, src) in sources.iter().enumerate() {
                let (out, trace) = layer.forward_stream(s, streams[i], p_agg, src);
                streams[i] = out;
                traces[i].push(trace);
            }
        }
        let fused = s.tape.concat_cols(&streams);
        let c_hoi = self.head.forward(s, fused);
        AggregatedFeature {
            z_ins_hat: streams[0],
            z_c_hat: streams[1],
            z_vlm_hat: streams[2],
            fused,
            c_hoi,
            traces,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::decoder::DecoderLayer;
    use crate::rng::{self, streams};

    const DIM: usize = 16;
    const NQ: usize = 4;
    const NHOI: usize = 6;

    fn fixture(seed: u64) -> (ParamStore, ContextAggregator) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, streams::INIT);
        let agg = ContextAggregator::init(DIM, 4, 32, 2, NQ, NHOI, &mut store, &mut r);
        store.insert("queries.q_agg", Tensor::randn(NQ, DIM, 1.0, &mut r));
        store.insert("queries.p_agg", Tensor::randn(NQ, DIM, 1.0, &mut r));
        (store, agg)
    }

    fn randn_leaf(s: &mut Session, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Var {
        s.tape.leaf(Tensor::randn(rows, cols, 1.0, rng))
    }

    #[test]
    fn output_shapes_and_finiteness() {
        let (store, agg) = fixture(7);
        let mut s = Session::new(&store);
        let q = s.param("queries.q_agg");
        let p = s.param("queries.p_agg");
        let mut r = rng::stream(8, streams::INIT);
        let zi = randn_leaf(&mut s, 2 * NQ, DIM, &mut r);
        let zc = randn_leaf(&mut s, NQ, DIM, &mut r);
        let zv = randn_leaf(&mut s, 10, DIM, &mut r);
        let out = agg.aggregate(
            &mut s,
            q,
            p,
            KvSource::active(zi, None),
            KvSource::active(zc, None),
            KvSource::active(zv, None),
        );
        assert_eq!(s.tape.value(out.fused).shape(), (NQ, 3 * DIM));
        assert_eq!(s.tape.value(out.c_hoi).shape(), (NQ, NHOI));
        assert!(s.tape.value(out.fused).is_finite());
        assert!(s.tape.value(out.c_hoi).is_finite());
        assert_eq!(out.traces[0].len(), 2);
        assert_eq!(out.traces[2][0].weights.shape(), (NQ, 10));
    }

    #[test]
    fn single_parameter_set_not_three() {
        let (store, _) = fixture(9);
        let mut scratch = ParamStore::new();
        let mut r = rng::stream(9, streams::INIT);
        DecoderLayer::init("ref.layer0", DIM, 4, 32, &mut scratch, &mut r);
        assert_eq!(
            store.scalar_count_under("aggregator.layer0"),
            scratch.scalar_count_under("ref.layer0"),
            "aggregator layer must hold exactly one sublayer parameter set"
        );
    }

    #[test]
    fn identical_sources_give_identical_streams() {
        let (store, agg) = fixture(10);
        let mut s = Session::new(&store);
        let q = s.param("queries.q_agg");
        let p = s.param("queries.p_agg");
        let mut r = rng::stream(11, streams::INIT);
        let z = randn_leaf(&mut s, NQ, DIM, &mut r);
        let out = agg.aggregate(
            &mut s,
            q,
            p,
            KvSource::active(z, None),
            KvSource::active(z, None),
            KvSource::active(z, None),
        );
        let a = s.tape.value(out.z_ins_hat);
        let b = s.tape.value(out.z_c_hat);
        let c = s.tape.value(out.z_vlm_hat);
        assert_eq!(a.data, b.data);
        assert_eq!(b.data, c.data);
    }

    #[test]
    fn padded_source_rows_carry_no_signal() {
        let (store, agg) = fixture(12);
        let run = |poison: f64| {
            let mut s = Session::new(&store);
            let q = s.param("queries.q_agg");
            let p = s.param("queries.p_agg");
            let mut r = rng::stream(13, streams::INIT);
            let mut zc = Tensor::randn(NQ, DIM, 1.0, &mut r);
            for j in 0..DIM {
                zc.set(NQ - 1, j, poison);
            }
            let zi = s.tape.leaf(Tensor::randn(2 * NQ, DIM, 1.0, &mut r));
            let zc = s.tape.leaf(zc);
            let mut pad = vec![false; NQ];
            pad[NQ - 1] = true;
            let zv = KvSource::disabled(&mut s, 1, DIM);
            let out = agg.aggregate(
                &mut s,
                q,
                p,
                KvSource::active(zi, None),
                KvSource::active(zc, Some(pad)),
                zv,
            );
            s.tape.value(out.c_hoi).clone()
        };
        // identical instance stream rng means any difference comes from the
        // poisoned padded context row
        assert_eq!(run(0.0).data, run(1e6).data);
    }

    #[test]
    fn disabled_branches_still_produce_finite_logits() {
        let (store, agg) = fixture(14);
        let mut s = Session::new(&store);
        let q = s.param("queries.q_agg");
        let p = s.param("queries.p_agg");
        let mut r = rng::stream(15, streams::INIT);
        let zi = randn_leaf(&mut s, 2 * NQ, DIM, &mut r);
        let ctx = KvSource::disabled(&mut s, NQ, DIM);
        let tch = KvSource::disabled(&mut s, 1, DIM);
        let out = agg.aggregate(&mut s, q, p, KvSource::active(zi, None), ctx, tch);
        assert!(s.tape.value(out.c_hoi).is_finite());
        // context and teacher streams see zero sources, so they agree
        assert_eq!(
            s.tape.value(out.z_c_hat).data,
            s.tape.value(out.z_vlm_hat).data
        );
    }

    #[test]
    fn third_branch_changes_output_when_enabled() {
        let (store, agg) = fixture(16);
        let run = |with_teacher: bool| {
            let mut s = Session::new(&store);
            let q = s.param("queries.q_agg");
            let p = s.param("queries.p_agg");
            let mut r = rng::stream(17, streams::INIT);
            let zi = s.tape.leaf(Tensor::randn(2 * NQ, DIM, 1.0, &mut r));
            let zc = s.tape.leaf(Tensor::randn(NQ, DIM, 1.0, &mut r));
            let zv = Tensor::randn(6, DIM, 1.0, &mut r);
            let tch = if with_teacher {
                let zv = s.tape.leaf(zv);
                KvSource::active(zv, None)
            } else {
                KvSource::disabled(&mut s, 6, DIM)
            };
            let out = agg.aggregate(
                &mut s,
                q,
                p,
                KvSource::active(zi, None),
                KvSource::active(zc, None),
                tch,
            );
            (
                s.tape.value(out.z_ins_hat).clone(),
                s.tape.value(out.z_c_hat).clone(),
                s.tape.value(out.c_hoi).clone(),
            )
        };
        let (ins_a, c_a, hoi_a) = run(true);
        let (ins_b, c_b, hoi_b) = run(false);
        // first two streams never read the third source
        assert_eq!(ins_a.data, ins_b.data);
        assert_eq!(c_a.data, c_b.data);
        assert_ne!(hoi_a.data, hoi_b.data);
    }

    #[test]
    fn gradients_reach_queries_and_sources() {
        let (store, agg) = fixture(18);
        let mut s = Session::new(&store);
        let q = s.param("queries.q_agg");
        let p = s.param("queries.p_agg");
        let mut r = rng::stream(19, streams::INIT);
        let zi = randn_leaf(&mut s, 2 * NQ, DIM, &mut r);
        let zc = randn_leaf(&mut s, NQ, DIM, &mut r);
        let zv = randn_leaf(&mut s, 5, DIM, &mut r);
        let out = agg.aggregate(
            &mut s,
            q,
            p,
            KvSource::active(zi, None),
            KvSource::active(zc, None),
            KvSource::active(zv, None),
        );
        let loss = s.tape.sum_all(out.c_hoi);
        let grads = s.tape.backward(loss);
        for v in [zi, zc, zv] {
            assert!(grads.get(&s.tape, v).max_abs() > 0.0);
        }
        let named = s.param_grads(&grads);
        assert!(named["queries.q_agg"].max_abs() > 0.0);
        assert!(named["aggregator.layer0.cross_attn.wq.weight"].max_abs() > 0.0);
        assert!(named["aggregator.head.weight"].max_abs() > 0.0);
    }
}
