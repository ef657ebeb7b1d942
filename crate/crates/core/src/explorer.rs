//! Semantic-guided exploration: category-similarity prediction over the
//! visual tokens, top-k guidance selection, and fusion of the guidance back
//! into the decoder queries.
//!
//! Two small MLPs (instance and interaction explorers) score every visual
//! token against object and verb categories. Their final-layer columns start
//! as projected teacher text embeddings, so at step 0 each category's scorer
//! is its teacher embedding. A Gumbel softmax over the category axis keeps
//! exploration stochastic during training; evaluation drops the noise.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::model::layers::{LayerNorm, Linear, Mlp3};
use crate::model::params::{ParamStore, Session};
use crate::rng::{self, streams};
use crate::teacher::{category_embedding, SemanticTeacher};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Noise switch for similarity prediction.
pub enum ExploreMode<'r> {
    /// Gumbel-perturbed softmax; the caller owns the generator.
    Train(&'r mut ChaCha8Rng),
    /// Plain softmax of the logits.
    Eval,
}

/// Selection outcome: which categories were taken, in score order, and which
/// guidance rows are zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectInfo {
    pub selected: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticExplorer {
    pub mlp_ins: Mlp3,
    pub mlp_int: Mlp3,
    /// Query-axis map taking the `2 N_q` guidance rows to `N_q` context
    /// query offsets.
    pub to_context: Linear,
    /// Query-axis map taking the `N_q` instance-guidance rows to `2 N_q`
    /// instance query offsets.
    pub to_instance: Linear,
    /// Teacher-feature adapter into the model width.
    pub adapter: Linear,
    pub adapter_norm: LayerNorm,
    pub queries: usize,
    pub n_obj: usize,
    pub n_verb: usize,
}

impl SemanticExplorer {
    pub fn init(
        dim: usize,
        queries: usize,
        n_obj: usize,
        n_verb: usize,
        teacher_dim: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        SemanticExplorer {
            mlp_ins: Mlp3::init("explorer.ins", dim, dim, n_obj, store, rng),
            mlp_int: Mlp3::init("explorer.int", dim, dim, n_verb, store, rng),
            to_context: Linear::init("explorer.to_context", 2 * queries, queries, store, rng),
            to_instance: Linear::init("explorer.to_instance", queries, 2 * queries, store, rng),
            adapter: Linear::init("explorer.adapter", teacher_dim, dim, store, rng),
            adapter_norm: LayerNorm::init("explorer.adapter_norm", dim, store),
            queries,
            n_obj,
            n_verb,
        }
    }

    /// Overwrites the explorers' final-layer columns with projected teacher
    /// text embeddings: column `j` becomes the normalized projection of
    /// category `j`'s embedding. The projection matrix is seeded, so the
    /// mapping is reproducible.
    pub fn init_heads_from_teacher(
        &self,
        store: &mut ParamStore,
        teacher: &dyn SemanticTeacher,
        templates: &[String],
        objects: &[String],
        verbs: &[String],
        seed: u64,
    ) {
        assert_eq!(objects.len(), self.n_obj, "object category count");
        assert_eq!(verbs.len(), self.n_verb, "verb category count");
        let dim = store.get("explorer.ins.l3.weight").rows;
        let proj = teacher_projection(teacher.dim(), dim, seed);
        write_teacher_columns(store, "explorer.ins.l3.weight", teacher, templates, objects, &proj);
        write_teacher_columns(store, "explorer.int.l3.weight", teacher, templates, verbs, &proj);
    }

    /// Token-category similarity maps `[HW, n_obj]` and `[HW, n_verb]`,
    /// rows summing to 1.
    pub fn explore(
        &self,
        s: &mut Session,
        tokens: Var,
        temperature: f64,
        mode: ExploreMode,
    ) -> Result<(Var, Var)> {
        if temperature <= 0.0 {
            return Err(Error::Config(format!(
                "gumbel temperature must be > 0, got {temperature}"
            )));
        }
        let logit_ins = self.mlp_ins.forward(s, tokens);
        let logit_int = self.mlp_int.forward(s, tokens);
        let (a, b) = match mode {
            ExploreMode::Train(rng) => {
                let ga = gumbel_like(s.tape.value(logit_ins), rng);
                let gb = gumbel_like(s.tape.value(logit_int), rng);
                let na = s.tape.constant(ga);
                let nb = s.tape.constant(gb);
                (s.tape.add(logit_ins, na), s.tape.add(logit_int, nb))
            }
            ExploreMode::Eval => (logit_ins, logit_int),
        };
        let sa = s.tape.scale(a, 1.0 / temperature);
        let sb = s.tape.scale(b, 1.0 / temperature);
        Ok((s.tape.softmax_rows(sa), s.tape.softmax_rows(sb)))
    }

    /// Takes the `N_q` categories with the highest mean similarity and pools
    /// the visual tokens with each one's token weights. Rows beyond the
    /// category count are zero and flagged in the pad mask.
    pub fn select_guidance(
        &self,
        s: &mut Session,
        tokens: Var,
        omega: Var,
    ) -> (Var, SelectInfo) {
        let n_q = self.queries;
        let val = s.tape.value(omega);
        let n_cat = val.cols;
        let tokens_n = val.rows;

        let mut pooled: Vec<(f64, usize)> = (0..n_cat)
            .map(|j| {
                let mean = (0..tokens_n).map(|i| val.get(i, j)).sum::<f64>() / tokens_n as f64;
                (mean, j)
            })
            .collect();
        pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let take = n_q.min(n_cat);
        let selected: Vec<usize> = pooled[..take].iter().map(|&(_, j)| j).collect();

        let mut rows = Vec::with_capacity(n_q);
        for &j in &selected {
            let col = s.tape.slice_cols(omega, j, 1);
            let total = s.tape.sum_all(col);
            let w = s.tape.div(col, total);
            let wt = s.tape.transpose(w);
            rows.push(s.tape.matmul(wt, tokens));
        }
        let dim = s.tape.value(tokens).cols;
        if take < n_q {
            rows.push(s.tape.constant(Tensor::zeros(n_q - take, dim)));
        }
        let f = if rows.len() == 1 {
            rows[0]
        } else {
            s.tape.concat_rows(&rows)
        };
        let mut pad_mask = vec![false; take];
        pad_mask.extend(std::iter::repeat_n(true, n_q - take));
        (f, SelectInfo { selected, pad_mask })
    }

    /// Query-axis linear maps from guidance to query offsets:
    /// `f_c = [f_ins; f_int]` (2N_q rows) feeds the context offset,
    /// `f_ins` (N_q rows) feeds the instance offset.
    pub fn fuse_guidance(&self, s: &mut Session, f_ins: Var, f_int: Var) -> (Var, Var) {
        let f_c = s.tape.concat_rows(&[f_ins, f_int]);
        let fct = s.tape.transpose(f_c);
        let ctx_t = self.to_context.forward(s, fct);
        let context_offset = s.tape.transpose(ctx_t);

        let fit = s.tape.transpose(f_ins);
        let ins_t = self.to_instance.forward(s, fit);
        let instance_offset = s.tape.transpose(ins_t);
        (instance_offset, context_offset)
    }

    /// Teacher visual tokens adapted to the model width: `[HW', C]`.
    pub fn teacher_visual_feature(
        &self,
        s: &mut Session,
        teacher: &dyn SemanticTeacher,
        img: &crate::model::encoder::PixelImage,
    ) -> Var {
        let raw = s.tape.constant(teacher.visual_embed(img));
        let mapped = self.adapter.forward(s, raw);
        self.adapter_norm.forward(s, mapped)
    }
}

/// Seeded projection from teacher space to model space with unit-norm
/// output applied per category.
fn teacher_projection(teacher_dim: usize, dim: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, streams::TEACHER);
    Tensor::randn(teacher_dim, dim, 1.0, &mut r)
}

fn write_teacher_columns(
    store: &mut ParamStore,
    weight: &str,
    teacher: &dyn SemanticTeacher,
    templates: &[String],
    names: &[String],
    proj: &Tensor,
) {
    let w = store.get_mut(weight);
    assert_eq!(w.cols, names.len(), "{weight} column count");
    for (j, name) in names.iter().enumerate() {
        let e = category_embedding(teacher, templates, name);
        let mut h: Vec<f64> = (0..w.rows)
            .map(|r| (0..proj.rows).map(|d| e[d] * proj.get(d, r)).sum())
            .collect();
        let n = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in h.iter_mut() {
            *x /= n;
        }
        for (r, &v) in h.iter().enumerate() {
            w.set(r, j, v);
        }
    }
}

/// Standard Gumbel(0, 1) noise in the shape of `t`.
fn gumbel_like(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(t.rows, t.cols, |_, _| {
        let u: f64 = rng.random_range(1e-12..1.0);
        -(-u.ln()).ln()
    })
}

/// Plain softmax helper for scalar slices, used by tests and by eval-time
/// diagnostics.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}
