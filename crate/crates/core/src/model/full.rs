//! Whole-detector assembly: encoder, semantic exploration, the two decoder
//! branches, the teacher adapter, and the aggregation head, with switches
//! for the ablation configurations.

use crate::aggregator::{AggregatedFeature, ContextAggregator, KvSource};
use crate::autodiff::Tensor;
use crate::constraints::rho_for_tau;
use crate::error::Result;
use crate::explorer::{softmax_slice, ExploreMode, SelectInfo, SemanticExplorer};
use crate::geometry;
use crate::matching::PairSnapshot;
use crate::model::decoder::{ContextBranch, ContextOutput, InstanceBranch, InstanceOutput};
use crate::model::encoder::{Encoder, PixelImage, VisualMemory};
use crate::model::params::{ParamStore, Session};
use crate::teacher::SemanticTeacher;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture sizes. `desk` is the test-scale profile; `paper` matches the
/// full-scale configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub dim: usize,
    pub queries: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub stride: usize,
    pub n_obj: usize,
    pub n_verb: usize,
    pub n_hoi: usize,
    pub teacher_dim: usize,
}

impl ModelDims {
    pub fn desk() -> Self {
        ModelDims {
            dim: 32,
            queries: 8,
            heads: 4,
            ffn_hidden: 64,
            enc_layers: 2,
            dec_layers: 2,
            stride: 8,
            n_obj: 8,
            n_verb: 4,
            n_hoi: 32,
            teacher_dim: 16,
        }
    }

    pub fn paper() -> Self {
        ModelDims {
            dim: 256,
            queries: 64,
            heads: 8,
            ffn_hidden: 2048,
            enc_layers: 6,
            dec_layers: 3,
            stride: 32,
            n_obj: 80,
            n_verb: 117,
            n_hoi: 600,
            teacher_dim: 512,
        }
    }
}

/// Ablation switches: which branches participate in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    /// Spatial-context branch (context extractor + its aggregation stream).
    pub context: bool,
    /// Semantic-guided exploration feeding query offsets.
    pub sce: bool,
    /// Teacher visual stream in the aggregator.
    pub teacher: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            context: true,
            sce: true,
            teacher: true,
        }
    }
}

impl BranchConfig {
    pub fn instance_only() -> Self {
        BranchConfig {
            context: false,
            sce: false,
            teacher: false,
        }
    }
}

/// Training vs evaluation forward behaviour; training carries the noise
/// generator for the exploration softmax.
pub enum RunMode<'r> {
    Train { gumbel: &'r mut ChaCha8Rng },
    Eval,
}

/// Category-selection bookkeeping from the exploration step.
pub struct GuidanceInfo {
    pub objects: SelectInfo,
    pub verbs: SelectInfo,
    /// Context query `k` is padded when both guidance rows aligned with it
    /// (object row `k` and verb row `k`) were zero padding.
    pub context_pad: Vec<bool>,
}

pub struct ModelOutput {
    pub mem: VisualMemory,
    pub instance: InstanceOutput,
    pub context: Option<ContextOutput>,
    pub guidance: Option<GuidanceInfo>,
    pub aggregated: AggregatedFeature,
}

/// Detached per-query view of the predictions for matching and evaluation.
pub fn snapshot(s: &Session, out: &ModelOutput) -> Vec<PairSnapshot> {
    let bh = geometry::tensor_to_boxes(s.tape.value(out.instance.b_h))
        .expect("sigmoid box heads emit valid boxes");
    let bo = geometry::tensor_to_boxes(s.tape.value(out.instance.b_o))
        .expect("sigmoid box heads emit valid boxes");
    let co = s.tape.value(out.instance.c_o);
    let ch = s.tape.value(out.aggregated.c_hoi);
    (0..bh.len())
        .map(|k| PairSnapshot {
            human: bh[k],
            object: bo[k],
            object_probs: softmax_slice(co.row_slice(k)),
            hoi_scores: ch.row_slice(k).iter().map(|&v| sigmoid(v)).collect(),
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct HoiModel {
    pub dims: ModelDims,
    pub encoder: Encoder,
    pub instance: InstanceBranch,
    pub context: ContextBranch,
    pub explorer: SemanticExplorer,
    pub aggregator: ContextAggregator,
    pub teacher: Option<std::boxed::Box<dyn SemanticTeacher>>,
}

impl HoiModel {
    /// Registers every parameter tensor into `store` and returns the wiring.
    /// `tau_init` seeds the learnable distance temperature.
    pub fn init(
        dims: ModelDims,
        tau_init: f64,
        teacher: Option<std::boxed::Box<dyn SemanticTeacher>>,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = &dims;
        let encoder = Encoder::init(d.dim, d.heads, d.ffn_hidden, d.enc_layers, d.stride, store, rng);
        let instance = InstanceBranch::init(
            d.dim, d.heads, d.ffn_hidden, d.dec_layers, d.queries, d.n_obj, store, rng,
        );
        let context =
            ContextBranch::init(d.dim, d.heads, d.ffn_hidden, d.dec_layers, d.queries, store, rng);
        let explorer = SemanticExplorer::init(
            d.dim, d.queries, d.n_obj, d.n_verb, d.teacher_dim, store, rng,
        );
        let aggregator = ContextAggregator::init(
            d.dim, d.heads, d.ffn_hidden, d.dec_layers, d.queries, d.n_hoi, store, rng,
        );
        let q = d.queries;
        store.insert("queries.q_ins", Tensor::randn(2 * q, d.dim, 1.0, rng));
        store.insert("queries.p_ins", Tensor::randn(2 * q, d.dim, 1.0, rng));
        store.insert("queries.q_c", Tensor::randn(q, d.dim, 1.0, rng));
        store.insert("queries.p_c", Tensor::randn(q, d.dim, 1.0, rng));
        store.insert("queries.q_agg", Tensor::randn(q, d.dim, 1.0, rng));
        store.insert("queries.p_agg", Tensor::randn(q, d.dim, 1.0, rng));
        store.insert("constraints.rho", Tensor::full(1, 1, rho_for_tau(tau_init)));
        HoiModel {
            dims,
            encoder,
            instance,
            context,
            explorer,
            aggregator,
            teacher,
        }
    }

    /// Overwrites the explorer heads with projected teacher text embeddings
    /// for the given category names. No-op without a teacher.
    pub fn init_explorer_from_teacher(
        &self,
        store: &mut ParamStore,
        templates: &[String],
        objects: &[String],
        verbs: &[String],
        seed: u64,
    ) {
        if let Some(t) = &self.teacher {
            self.explorer
                .init_heads_from_teacher(store, t.as_ref(), templates, objects, verbs, seed);
        }
    }

    /// The softplus-mapped learnable temperature for the dynamic distance
    /// weight.
    pub fn tau(&self, s: &mut Session) -> crate::autodiff::Var {
        let rho = s.param("constraints.rho");
        s.tape.softplus(rho)
    }

    pub fn forward(
        &self,
        s: &mut Session,
        img: &PixelImage,
        branches: &BranchConfig,
        temperature: f64,
        mode: RunMode,
    ) -> Result<ModelOutput> {
        let mem = self.encoder.forward(s, img)?;
        let nq = self.dims.queries;

        let mut guidance = None;
        let (ins_off, ctx_off) = if branches.sce {
            let explore_mode = match mode {
                RunMode::Train { gumbel } => ExploreMode::Train(gumbel),
                RunMode::Eval => ExploreMode::Eval,
            };
            let (w_ins, w_int) = self.explorer.explore(s, mem.z, temperature, explore_mode)?;
            let (f_ins, objects) = self.explorer.select_guidance(s, mem.z, w_ins);
            let (f_int, verbs) = self.explorer.select_guidance(s, mem.z, w_int);
            let (ins_off, ctx_off) = self.explorer.fuse_guidance(s, f_ins, f_int);
            let context_pad: Vec<bool> = objects
                .pad_mask
                .iter()
                .zip(&verbs.pad_mask)
                .map(|(&a, &b)| a && b)
                .collect();
            guidance = Some(GuidanceInfo {
                objects,
                verbs,
                context_pad,
            });
            (Some(ins_off), Some(ctx_off))
        } else {
            (None, None)
        };

        let q_ins = s.param("queries.q_ins");
        let p_ins = s.param("queries.p_ins");
        let q_ins = match ins_off {
            Some(o) => s.tape.add(q_ins, o),
            None => q_ins,
        };
        let ins_pad = vec![false; 2 * nq];
        let instance = self.instance.forward(s, &mem, q_ins, p_ins, &ins_pad);

        let context_pad_mask: Vec<bool> = guidance
            .as_ref()
            .map(|g| g.context_pad.clone())
            .unwrap_or_else(|| vec![false; nq]);
        let context = if branches.context {
            let q_c = s.param("queries.q_c");
            let p_c = s.param("queries.p_c");
            let q_c = match ctx_off {
                Some(o) => s.tape.add(q_c, o),
                None => q_c,
            };
            Some(self.context.forward(s, &mem, q_c, p_c, &context_pad_mask))
        } else {
            None
        };

        let teacher_feat = if branches.teacher {
            match &self.teacher {
                Some(t) => Some(self.explorer.teacher_visual_feature(s, t.as_ref(), img)),
                None => {
                    log::warn!("teacher branch requested but no provider configured; stream zeroed");
                    None
                }
            }
        } else {
            None
        };

        let instance_src = KvSource::active(instance.bundle.z, None);
        let context_src = match &context {
            Some(c) => {
                let pad = context_pad_mask.iter().any(|&b| b).then(|| context_pad_mask.clone());
                KvSource::active(c.bundle.z, pad)
            }
            None => KvSource::disabled(s, nq, self.dims.dim),
        };
        let teacher_src = match teacher_feat {
            Some(z) => KvSource::active(z, None),
            None => KvSource::disabled(s, 1, self.dims.dim),
        };

        let q_agg = s.param("queries.q_agg");
        let p_agg = s.param("queries.p_agg");
        let aggregated =
            self.aggregator
                .aggregate(s, q_agg, p_agg, instance_src, context_src, teacher_src);

        Ok(ModelOutput {
            mem,
            instance,
            context,
            guidance,
            aggregated,
        })
    }
}
