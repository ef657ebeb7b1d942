//! Box geometry shared by losses, matching and evaluation.
//!
//! Boxes are stored in center-size form `(cx, cy, w, h)`. Coordinates are
//! normalized to `[0, 1]` inside the model, but the math here works at any
//! scale. Two parallel implementations exist: plain `f64` functions for
//! matching and evaluation, and tape-based row-wise versions for the
//! differentiable losses. A unit test pins the two routes against each other.
//!
//! Conventions for degenerate input: IoU and GIoU of two zero-area boxes at
//! the same point are 0. Everywhere an epsilon appears it is [`EPS`].

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default epsilon for every guarded denominator.
pub const EPS: f64 = 1e-8;

/// Axis-aligned box in center-size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative size w={w} h={h}")));
        }
        Ok(Box { cx, cy, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if x1 < x0 || y1 < y0 {
            return Err(Error::InvalidBox(format!(
                "corners out of order ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Box::new(
            0.5 * (x0 + x1),
            0.5 * (y0 + y1),
            x1 - x0,
            y1 - y0,
        )
    }

    pub const fn zero() -> Self {
        Box {
            cx: 0.0,
            cy: 0.0,
            w: 0.0,
            h: 0.0,
        }
    }

    /// Corner-form view `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_zero(&self) -> bool {
        self.cx == 0.0 && self.cy == 0.0 && self.w == 0.0 && self.h == 0.0
    }
}

/// A fixed-size set of boxes indexed by query position, with a padding mask.
/// `pad_mask[k]` is true for zero-padded positions that every loss skips.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub boxes: Vec<Box>,
    pub pad_mask: Vec<bool>,
}

impl BoxSet {
    pub fn new(boxes: Vec<Box>, pad_mask: Vec<bool>) -> Result<Self> {
        if boxes.len() != pad_mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "box set has {} boxes but {} mask entries",
                boxes.len(),
                pad_mask.len()
            )));
        }
        for (k, (b, &pad)) in boxes.iter().zip(pad_mask.iter()).enumerate() {
            if pad && !b.is_zero() {
                return Err(Error::InvalidBox(format!(
                    "padded entry {k} must be the zero box"
                )));
            }
        }
        Ok(BoxSet { boxes, pad_mask })
    }

    pub fn unpadded(boxes: Vec<Box>) -> Self {
        let n = boxes.len();
        BoxSet {
            boxes,
            pad_mask: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Number of non-padded entries.
    pub fn active(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| !p).count()
    }
}

fn intersection_area(a: &Box, b: &Box) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    iw * ih
}

fn enclosing_area(a: &Box, b: &Box) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0))
}

/// Intersection over union, in `[0, 1]`. Zero when both boxes are degenerate.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Generalized IoU, in `[-1, 1]`. Returns 0 when the enclosing box is
/// degenerate (both boxes zero-area at the same point).
pub fn giou(a: &Box, b: &Box) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let enclose = enclosing_area(a, b);
    if enclose <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (enclose - union) / enclose
}

/// Reduction applied to the four coordinate gaps of [`box_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceReduction {
    #[default]
    Sum,
    Mean,
}

/// L1 gap between two boxes over the center-size parameters.
pub fn box_distance(a: &Box, b: &Box) -> f64 {
    box_distance_with(a, b, DistanceReduction::Sum)
}

pub fn box_distance_with(a: &Box, b: &Box, reduction: DistanceReduction) -> f64 {
    let d = (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs();
    match reduction {
        DistanceReduction::Sum => d,
        DistanceReduction::Mean => d / 4.0,
    }
}

/// `exp(-distance / (tau + eps))`: 1 at zero distance, decaying toward 0.
/// Errors when `tau + eps <= 0`; training keeps `tau` positive by storing it
/// through a softplus.
pub fn dynamic_distance_weight(a: &Box, b: &Box, tau: f64, eps: f64) -> Result<f64> {
    dynamic_distance_weight_with(a, b, tau, eps, DistanceReduction::Sum)
}

pub fn dynamic_distance_weight_with(
    a: &Box,
    b: &Box,
    tau: f64,
    eps: f64,
    reduction: DistanceReduction,
) -> Result<f64> {
    let denom = tau + eps;
    if denom <= 0.0 {
        return Err(Error::Config(format!(
            "dynamic distance weight needs tau + eps > 0, got {denom}"
        )));
    }
    Ok((-box_distance_with(a, b, reduction) / denom).exp())
}

// ---------------------------------------------------------------------------
// Tape (differentiable) versions. Boxes are [N, 4] tensors in center-size
// form; all outputs are [N, 1] columns.
// ---------------------------------------------------------------------------

/// Corner columns `(x0, y0, x1, y1)` of a `[N, 4]` box tensor.
pub fn corners_t(tape: &mut Tape, boxes: Var) -> (Var, Var, Var, Var) {
    let cx = tape.slice_cols(boxes, 0, 1);
    let cy = tape.slice_cols(boxes, 1, 1);
    let w = tape.slice_cols(boxes, 2, 1);
    let h = tape.slice_cols(boxes, 3, 1);
    let hw = tape.scale(w, 0.5);
    let hh = tape.scale(h, 0.5);
    let x0 = tape.sub(cx, hw);
    let y0 = tape.sub(cy, hh);
    let x1 = tape.add(cx, hw);
    let y1 = tape.add(cy, hh);
    (x0, y0, x1, y1)
}

/// Row-wise GIoU between two `[N, 4]` box tensors. Denominators carry a tiny
/// guard; callers feed non-degenerate boxes (model boxes come from sigmoids).
pub fn giou_rowwise(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (ax0, ay0, ax1, ay1) = corners_t(tape, a);
    let (bx0, by0, bx1, by1) = corners_t(tape, b);

    let ix0 = tape.max(ax0, bx0);
    let iy0 = tape.max(ay0, by0);
    let ix1 = tape.min(ax1, bx1);
    let iy1 = tape.min(ay1, by1);
    let iw_raw = tape.sub(ix1, ix0);
    let ih_raw = tape.sub(iy1, iy0);
    let iw = tape.relu(iw_raw);
    let ih = tape.relu(ih_raw);
    let inter = tape.mul(iw, ih);

    let aw = tape.sub(ax1, ax0);
    let ah = tape.sub(ay1, ay0);
    let area_a = tape.mul(aw, ah);
    let bw = tape.sub(bx1, bx0);
    let bh = tape.sub(by1, by0);
    let area_b = tape.mul(bw, bh);

    let sum_ab = tape.add(area_a, area_b);
    let union = tape.sub(sum_ab, inter);
    let union_safe = tape.add_const(union, 1e-12);
    let iou = tape.div(inter, union_safe);

    let ex0 = tape.min(ax0, bx0);
    let ey0 = tape.min(ay0, by0);
    let ex1 = tape.max(ax1, bx1);
    let ey1 = tape.max(ay1, by1);
    let ew = tape.sub(ex1, ex0);
    let eh = tape.sub(ey1, ey0);
    let enclose = tape.mul(ew, eh);
    let enclose_safe = tape.add_const(enclose, 1e-12);

    let gap = tape.sub(enclose, union);
    let penalty = tape.div(gap, enclose_safe);
    tape.sub(iou, penalty)
}

/// Row-wise coordinate distance between two `[N, 4]` box tensors.
pub fn box_distance_rowwise(
    tape: &mut Tape,
    a: Var,
    b: Var,
    reduction: DistanceReduction,
) -> Var {
    let diff = tape.sub(a, b);
    let gaps = tape.abs(diff);
    let sum = tape.sum_rowwise(gaps);
    match reduction {
        DistanceReduction::Sum => sum,
        DistanceReduction::Mean => tape.scale(sum, 0.25),
    }
}

/// Row-wise dynamic distance weight with a tape-resident `tau` (shape `[1, 1]`).
pub fn dynamic_weight_rowwise(
    tape: &mut Tape,
    a: Var,
    b: Var,
    tau: Var,
    eps: f64,
    reduction: DistanceReduction,
) -> Var {
    let dist = box_distance_rowwise(tape, a, b, reduction);
    let denom = tape.add_const(tau, eps);
    let ratio = tape.div(dist, denom);
    let neg = tape.neg(ratio);
    tape.exp(neg)
}

/// Pack boxes into a `[N, 4]` tensor.
pub fn boxes_to_tensor(boxes: &[Box]) -> crate::autodiff::Tensor {
    let mut data = Vec::with_capacity(boxes.len() * 4);
    for b in boxes {
        data.extend_from_slice(&[b.cx, b.cy, b.w, b.h]);
    }
    crate::autodiff::Tensor::from_vec(boxes.len(), 4, data)
}

/// Read a `[N, 4]` tensor back into boxes, clamping tiny negative sizes from
/// float noise.
pub fn tensor_to_boxes(t: &crate::autodiff::Tensor) -> Result<Vec<Box>> {
    if t.cols != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected [N, 4] box tensor, got {}x{}",
            t.rows, t.cols
        )));
    }
    (0..t.rows)
        .map(|i| {
            let r = t.row_slice(i);
            Box::new(r[0], r[1], r[2].max(0.0), r[3].max(0.0))
        })
        .collect()
}
