//! Detection losses over matched query-GT pairs and the assembly of the
//! per-image training objective: box regression (L1 + GIoU), object-class
//! cross-entropy with a down-weighted no-object class, a focal loss on the
//! interaction logits, the spatial constraint bundle, and their sum.

use crate::autodiff::{Tape, Tensor, Var};
use crate::constraints::{
    feature_constraint, instance_constraint_rows, region_constraint, spatial_constraint_total,
    ConstraintConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{self, boxes_to_tensor};
use crate::matching::{GroundTruthSet, MatchResult};
use crate::model::bundle::pair_reduce;
use crate::model::full::{HoiModel, ModelOutput};
use crate::model::params::Session;
use serde::{Deserialize, Serialize};

/// Loss coefficients and conventions. The values are conventional defaults
/// and live in the run config, not in code paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoiLossConfig {
    pub box_l1: f64,
    pub giou: f64,
    pub object_class: f64,
    pub interaction: f64,
    pub no_object_weight: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Supervise earlier decoder layers' detection heads too.
    pub aux_layers: bool,
}

impl Default for HoiLossConfig {
    fn default() -> Self {
        HoiLossConfig {
            box_l1: 2.5,
            giou: 1.0,
            object_class: 1.0,
            interaction: 1.0,
            no_object_weight: 0.1,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            aux_layers: false,
        }
    }
}

/// The prediction tensors the loss reads; detached from the rest of the
/// model output so tests can construct them directly.
pub struct PredVars {
    pub b_h: Var,
    pub b_o: Var,
    pub c_o: Var,
    pub c_hoi: Var,
}

impl PredVars {
    pub fn from_output(out: &ModelOutput) -> Self {
        PredVars {
            b_h: out.instance.b_h,
            b_o: out.instance.b_o,
            c_o: out.instance.c_o,
            c_hoi: out.aggregated.c_hoi,
        }
    }
}

/// Weighted components plus their sum. Component values carry their
/// coefficient already applied.
pub struct LossBreakdown {
    pub box_l1: Var,
    pub giou: Var,
    pub object_ce: Var,
    pub interaction: Var,
    pub total: Var,
}

/// Per-image detection loss over the matched assignment.
pub fn hoi_loss(
    tape: &mut Tape,
    preds: &PredVars,
    gts: &GroundTruthSet,
    m: &MatchResult,
    cfg: &HoiLossConfig,
) -> LossBreakdown {
    let n_q = tape.value(preds.b_h).rows;
    let n_obj_plus = tape.value(preds.c_o).cols;
    let no_object = n_obj_plus - 1;
    let n_hoi = tape.value(preds.c_hoi).cols;
    assert_eq!(m.pairs.len() + m.unmatched.len(), n_q, "match covers all queries");

    let (box_l1, giou) = if m.pairs.is_empty() {
        (tape.scalar(0.0), tape.scalar(0.0))
    } else {
        let rows: Vec<usize> = m.pairs.iter().map(|&(q, _)| q).collect();
        let gt_h: Vec<_> = m.pairs.iter().map(|&(_, g)| gts.pairs[g].human).collect();
        let gt_o: Vec<_> = m.pairs.iter().map(|&(_, g)| gts.pairs[g].object).collect();
        let ph = tape.gather_rows(preds.b_h, &rows);
        let po = tape.gather_rows(preds.b_o, &rows);
        let th = tape.constant(boxes_to_tensor(&gt_h));
        let to = tape.constant(boxes_to_tensor(&gt_o));
        let inv_m = 1.0 / m.pairs.len() as f64;

        let l1_side = |p: Var, t: Var, tape: &mut Tape| {
            let d = tape.sub(p, t);
            let a = tape.abs(d);
            tape.sum_all(a)
        };
        let l1h = l1_side(ph, th, tape);
        let l1o = l1_side(po, to, tape);
        let l1 = tape.add(l1h, l1o);
        let box_l1 = tape.scale(l1, cfg.box_l1 * inv_m);

        let giou_side = |p: Var, t: Var, tape: &mut Tape| {
            let g = geometry::giou_rowwise(tape, t, p);
            let one_minus = tape.neg(g);
            let lm = tape.add_const(one_minus, 1.0);
            tape.sum_all(lm)
        };
        let gh = giou_side(ph, th, tape);
        let go = giou_side(po, to, tape);
        let g = tape.add(gh, go);
        (box_l1, tape.scale(g, cfg.giou * inv_m))
    };

    // object-class cross-entropy over every query; unmatched queries target
    // the no-object class at reduced weight
    let mut targets = vec![no_object; n_q];
    let mut weights = vec![cfg.no_object_weight; n_q];
    for &(q, g) in &m.pairs {
        targets[q] = gts.pairs[g].object_class;
        weights[q] = 1.0;
    }
    let lse = tape.logsumexp_rows(preds.c_o);
    let logsoft = tape.sub(preds.c_o, lse);
    let picked = tape.select_per_row(logsoft, &targets);
    let wcol = tape.constant(Tensor::from_fn(n_q, 1, |i, _| weights[i]));
    let weighted = tape.mul(picked, wcol);
    let wsum: f64 = weights.iter().sum();
    let ce_sum = tape.sum_all(weighted);
    let ce = tape.scale(ce_sum, -1.0 / wsum);
    let object_ce = tape.scale(ce, cfg.object_class);

    // focal loss on interaction logits; skipped entirely for empty-GT
    // images, which contribute only the no-object classification term
    let interaction = if gts.is_empty() {
        tape.scalar(0.0)
    } else {
        let mut y = Tensor::zeros(n_q, n_hoi);
        for &(q, g) in &m.pairs {
            for (c, &v) in gts.pairs[g].multi_hot(n_hoi).iter().enumerate() {
                if v > 0.0 {
                    y.set(q, c, 1.0);
                }
            }
        }
        let yv = tape.constant(y);
        let x = preds.c_hoi;
        let neg_x = tape.neg(x);

        let p_neg = tape.sigmoid(neg_x); // 1 - p
        let p_pos = tape.sigmoid(x);
        let nll_pos = tape.softplus(neg_x); // -log p
        let nll_neg = tape.softplus(x); // -log(1 - p)

        let wp = pow_gamma(tape, p_neg, cfg.focal_gamma);
        let pos_core = tape.mul(wp, nll_pos);
        let pos = tape.mul(pos_core, yv);

        let one_minus_y = {
            let ny = tape.neg(yv);
            tape.add_const(ny, 1.0)
        };
        let wn = pow_gamma(tape, p_pos, cfg.focal_gamma);
        let neg_core = tape.mul(wn, nll_neg);
        let neg = tape.mul(neg_core, one_minus_y);

        let pos_s = tape.sum_all(pos);
        let neg_s = tape.sum_all(neg);
        let pos_w = tape.scale(pos_s, cfg.focal_alpha);
        let neg_w = tape.scale(neg_s, 1.0 - cfg.focal_alpha);
        let fl = tape.add(pos_w, neg_w);
        let denom = m.pairs.len().max(1) as f64;
        let fl = tape.scale(fl, 1.0 / denom);
        tape.scale(fl, cfg.interaction)
    };

    let a = tape.add(box_l1, giou);
    let b = tape.add(object_ce, interaction);
    let total = tape.add(a, b);
    LossBreakdown {
        box_l1,
        giou,
        object_ce,
        interaction,
        total,
    }
}

/// `v^gamma` elementwise for `v > 0`. Integer exponents use repeated
/// multiplication; fractional ones go through exp/ln with a tiny guard.
fn pow_gamma(tape: &mut Tape, v: Var, gamma: f64) -> Var {
    if gamma == 0.0 {
        let z = tape.scale(v, 0.0);
        return tape.add_const(z, 1.0);
    }
    if gamma == 1.0 {
        return v;
    }
    if gamma == gamma.round() && gamma > 0.0 && gamma <= 8.0 {
        let mut acc = v;
        for _ in 1..gamma as usize {
            acc = tape.mul(acc, v);
        }
        return acc;
    }
    let guarded = tape.add_const(v, 1e-12);
    let l = tape.ln(guarded);
    let s = tape.scale(l, gamma);
    tape.exp(s)
}

/// Spatial constraint components for one image, weighted sum included.
pub struct SpatialBreakdown {
    pub fc: Var,
    pub rc: Var,
    pub ic: Var,
    pub total: Var,
}

/// Builds the three spatial constraints from a model output. Returns a zero
/// total when the context branch did not run. Ground-truth correspondence
/// for the instance constraint: context query `k` follows the Hungarian
/// assignment of instance pair `k`; unmatched pairs cycle through the GT
/// list round-robin.
pub fn spatial_losses(
    s: &mut Session,
    model: &HoiModel,
    out: &ModelOutput,
    gts: &GroundTruthSet,
    m: &MatchResult,
    cfg: &ConstraintConfig,
) -> SpatialBreakdown {
    let ctx = match &out.context {
        Some(c) => c,
        None => {
            let z = s.tape.scalar(0.0);
            return SpatialBreakdown {
                fc: z,
                rc: z,
                ic: z,
                total: z,
            };
        }
    };

    let ins_reduced = pair_reduce(&mut s.tape, &out.instance.bundle);
    let fc = feature_constraint(&mut s.tape, &ins_reduced, &ctx.bundle, cfg);
    let rc = region_constraint(
        &mut s.tape,
        ins_reduced.p,
        ctx.bundle.p,
        &ctx.bundle.pad_mask,
    );

    let ic = if gts.is_empty() {
        s.tape.scalar(0.0)
    } else {
        let n_q = model.dims.queries;
        let mut gt_h = Vec::with_capacity(n_q);
        let mut gt_o = Vec::with_capacity(n_q);
        for k in 0..n_q {
            let g = m.gt_for_query(k).unwrap_or(k % gts.pairs.len());
            gt_h.push(gts.pairs[g].human);
            gt_o.push(gts.pairs[g].object);
        }
        let h = s.tape.constant(boxes_to_tensor(&gt_h));
        let o = s.tape.constant(boxes_to_tensor(&gt_o));
        let tau = model.tau(s);
        instance_constraint_rows(
            &mut s.tape,
            ctx.b_c,
            h,
            o,
            tau,
            &ctx.bundle.pad_mask,
            cfg,
        )
    };

    let total = spatial_constraint_total(&mut s.tape, fc, rc, ic, cfg);
    SpatialBreakdown { fc, rc, ic, total }
}

/// End-to-end objective.
pub fn total_loss(tape: &mut Tape, l_hoi: Var, l_sc: Var) -> Var {
    tape.add(l_hoi, l_sc)
}

/// Aborts a training step whose loss went non-finite.
pub fn ensure_finite(tape: &Tape, v: Var, label: &str) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_finite() {
        return Err(Error::Numeric(format!(
            "{label} is non-finite: {:?}",
            t.data.iter().take(4).collect::<Vec<_>>()
        )));
    }
    Ok(t.item())
}
