//! Spatially contrastive constraint losses tying the context branch to the
//! instance branch.
//!
//! Three terms, all built on the tape so they backpropagate into both
//! branches:
//!
//! * feature constraint: punishes per-query feature similarity between the
//!   branches (mean absolute similarity of flattened per-layer stacks);
//! * region constraint: punishes nearby positional guided embeddings through
//!   a reversed L1 distance, `exp(-||p_ins - p_c||_1)`;
//! * instance constraint: rewards context boxes for moving off the matched
//!   human and object boxes, `2 + W_d * GIoU` per box, with the dynamic
//!   distance weight `W_d` flattening the loss once the context box is far
//!   away so it cannot drift to the image edge.
//!
//! The weighted sum is the spatial constraint loss added to the detection
//! loss.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, Box, DistanceReduction};
use crate::model::{mask_column, FeatureBundle};
use serde::{Deserialize, Serialize};

/// Similarity normalization for the feature constraint. `CosineL2` is plain
/// cosine similarity; `FormulaL1` divides the dot product by the product of
/// L1 norms instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityNorm {
    #[default]
    CosineL2,
    FormulaL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    pub fc: bool,
    pub rc: bool,
    pub ic: bool,
    pub lambda_fc: f64,
    pub lambda_rc: f64,
    pub lambda_ic: f64,
    pub similarity_norm: SimilarityNorm,
    pub distance_reduction: DistanceReduction,
    /// When false the dynamic distance weight is pinned to 1.
    pub dynamic_weight: bool,
    pub eps: f64,
    /// Initial value of the learnable temperature in the dynamic weight.
    pub tau_init: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            fc: true,
            rc: true,
            ic: true,
            lambda_fc: 4.0,
            lambda_rc: 1.0,
            lambda_ic: 4.0,
            similarity_norm: SimilarityNorm::CosineL2,
            distance_reduction: DistanceReduction::Sum,
            dynamic_weight: true,
            eps: 1e-8,
            tau_init: 0.5,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_fc < 0.0 || self.lambda_rc < 0.0 || self.lambda_ic < 0.0 {
            return Err(Error::Config(
                "constraint loss coefficients must be >= 0".into(),
            ));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("constraint eps must be > 0".into()));
        }
        if self.tau_init <= 0.0 {
            return Err(Error::Config("tau_init must be > 0".into()));
        }
        Ok(())
    }

    /// Any constraint term active?
    pub fn any_enabled(&self) -> bool {
        (self.fc && self.lambda_fc > 0.0)
            || (self.rc && self.lambda_rc > 0.0)
            || (self.ic && self.lambda_ic > 0.0)
    }
}

/// The temperature of the dynamic distance weight is stored through a
/// softplus so gradient steps can never push it non-positive.
pub fn rho_for_tau(tau: f64) -> f64 {
    assert!(tau > 0.0, "tau must be positive");
    tau.exp_m1().ln()
}

/// Maps the stored parameter back to the positive temperature.
pub fn tau_from_rho(tape: &mut Tape, rho: Var) -> Var {
    tape.softplus(rho)
}

/// Tiny guard inside `sqrt` so zero rows keep a finite gradient.
const NORM_GUARD: f64 = 1e-24;

fn row_similarity(tape: &mut Tape, a: Var, b: Var, cfg: &ConstraintConfig) -> Var {
    let prod = tape.mul(a, b);
    let dot = tape.sum_rowwise(prod);
    let (na, nb) = match cfg.similarity_norm {
        SimilarityNorm::CosineL2 => {
            let l2 = |v: Var, tape: &mut Tape| {
                let sq = tape.square(v);
                let s = tape.sum_rowwise(sq);
                let guarded = tape.add_const(s, NORM_GUARD);
                tape.sqrt(guarded)
            };
            (l2(a, tape), l2(b, tape))
        }
        SimilarityNorm::FormulaL1 => {
            let l1 = |v: Var, tape: &mut Tape| {
                let m = tape.abs(v);
                tape.sum_rowwise(m)
            };
            (l1(a, tape), l1(b, tape))
        }
    };
    let denom = tape.mul(na, nb);
    let denom = tape.add_const(denom, cfg.eps);
    tape.div(dot, denom)
}

/// Mean absolute per-query similarity between the two branches' flattened
/// per-layer stacks, over non-padded queries. Returns 0 when every query is
/// padded.
pub fn feature_constraint(
    tape: &mut Tape,
    ins: &FeatureBundle,
    ctx: &FeatureBundle,
    cfg: &ConstraintConfig,
) -> Var {
    assert_eq!(
        ins.per_layer.len(),
        ctx.per_layer.len(),
        "branches must share decoder depth"
    );
    assert_eq!(ins.rows(tape), ctx.rows(tape), "branches must share query count");

    let active = ctx.active();
    if active == 0 {
        log::warn!("feature constraint skipped: every context query is padded");
        return tape.scalar(0.0);
    }

    let flat_ins = concat_stack(tape, &ins.per_layer);
    let flat_ctx = concat_stack(tape, &ctx.per_layer);
    let sim = row_similarity(tape, flat_ins, flat_ctx, cfg);
    let mag = tape.abs(sim);
    let mask = tape.constant(mask_column(&ctx.pad_mask));
    let masked = tape.mul(mag, mask);
    let total = tape.sum_all(masked);
    tape.scale(total, 1.0 / active as f64)
}

fn concat_stack(tape: &mut Tape, layers: &[Var]) -> Var {
    assert!(!layers.is_empty());
    if layers.len() == 1 {
        layers[0]
    } else {
        tape.concat_cols(layers)
    }
}

/// `(1/N_q) * sum_k exp(-||p_ins_k - p_c_k||_1)` over non-padded queries.
/// The normalizer stays the full query count; padded terms contribute zero.
pub fn region_constraint(tape: &mut Tape, p_ins: Var, p_c: Var, pad_mask: &[bool]) -> Var {
    let n = tape.value(p_ins).rows;
    assert_eq!(n, tape.value(p_c).rows);
    assert_eq!(n, pad_mask.len());
    let diff = tape.sub(p_ins, p_c);
    let gaps = tape.abs(diff);
    let dist = tape.sum_rowwise(gaps);
    let neg = tape.neg(dist);
    let score = tape.exp(neg);
    let mask = tape.constant(mask_column(pad_mask));
    let masked = tape.mul(score, mask);
    let total = tape.sum_all(masked);
    tape.scale(total, 1.0 / n as f64)
}

/// Row-wise instance constraint against per-query ground-truth boxes
/// (`gt_h_rows`/`gt_o_rows` are `[N, 4]`, usually broadcast or match-gathered
/// by the caller). `tau` is the `[1, 1]` softplus-mapped temperature.
pub fn instance_constraint_rows(
    tape: &mut Tape,
    b_c: Var,
    gt_h_rows: Var,
    gt_o_rows: Var,
    tau: Var,
    pad_mask: &[bool],
    cfg: &ConstraintConfig,
) -> Var {
    let n = tape.value(b_c).rows;
    assert_eq!(n, pad_mask.len());
    let active = pad_mask.iter().filter(|&&p| !p).count();
    if active == 0 {
        return tape.scalar(0.0);
    }

    let side = |gt: Var, tape: &mut Tape| {
        let g = geometry::giou_rowwise(tape, gt, b_c);
        if cfg.dynamic_weight {
            let w = geometry::dynamic_weight_rowwise(
                tape,
                gt,
                b_c,
                tau,
                cfg.eps,
                cfg.distance_reduction,
            );
            tape.mul(w, g)
        } else {
            g
        }
    };
    let h_term = side(gt_h_rows, tape);
    let o_term = side(gt_o_rows, tape);
    let sum_sides = tape.add(h_term, o_term);
    let shifted = tape.add_const(sum_sides, 2.0);
    let mask = tape.constant(mask_column(pad_mask));
    let masked = tape.mul(shifted, mask);
    let total = tape.sum_all(masked);
    tape.scale(total, 1.0 / (2.0 * active as f64))
}

/// Convenience form for a single ground-truth pair broadcast to every
/// non-padded context query.
pub fn instance_constraint(
    tape: &mut Tape,
    b_c: Var,
    gt_h: &Box,
    gt_o: &Box,
    tau: Var,
    pad_mask: &[bool],
    cfg: &ConstraintConfig,
) -> Var {
    let n = tape.value(b_c).rows;
    let h = tape.constant(geometry::boxes_to_tensor(&vec![*gt_h; n]));
    let o = tape.constant(geometry::boxes_to_tensor(&vec![*gt_o; n]));
    instance_constraint_rows(tape, b_c, h, o, tau, pad_mask, cfg)
}

/// Weighted sum of the three constraint terms. Disabled terms contribute
/// nothing regardless of their value.
pub fn spatial_constraint_total(
    tape: &mut Tape,
    l_fc: Var,
    l_rc: Var,
    l_ic: Var,
    cfg: &ConstraintConfig,
) -> Var {
    let wf = if cfg.fc { cfg.lambda_fc } else { 0.0 };
    let wr = if cfg.rc { cfg.lambda_rc } else { 0.0 };
    let wi = if cfg.ic { cfg.lambda_ic } else { 0.0 };
    let a = tape.scale(l_fc, wf);
    let b = tape.scale(l_rc, wr);
    let c = tape.scale(l_ic, wi);
    let ab = tape.add(a, b);
    tape.add(ab, c)
}
