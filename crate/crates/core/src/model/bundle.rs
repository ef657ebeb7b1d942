//! Per-branch decoder outputs in tape form.

use crate::autodiff::{Tape, Tensor, Var};

/// What one decoder branch hands to the losses: the final feature matrix,
/// the stack of per-layer outputs, the branch's positional guided embedding,
/// and which query rows are zero padding.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    /// Final-layer output, `[rows, C]`.
    pub z: Var,
    /// One entry per decoder layer, each `[rows, C]`; last equals `z`.
    pub per_layer: Vec<Var>,
    /// Positional guided embedding, `[rows, C]`.
    pub p: Var,
    /// True for zero-padded query rows.
    pub pad_mask: Vec<bool>,
}

impl FeatureBundle {
    pub fn rows(&self, tape: &Tape) -> usize {
        tape.value(self.z).rows
    }

    pub fn active(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| !p).count()
    }

    /// `[rows, 1]` column holding 1 for active rows, 0 for padded ones.
    pub fn active_column(&self, tape: &mut Tape) -> Var {
        tape.constant(mask_column(&self.pad_mask))
    }
}

/// Column tensor encoding of a pad mask (1 = active, 0 = padded).
pub fn mask_column(pad_mask: &[bool]) -> Tensor {
    Tensor::from_fn(pad_mask.len(), 1, |i, _| if pad_mask[i] { 0.0 } else { 1.0 })
}

/// Collapses a 2-per-pair bundle to one row per pair by averaging rows
/// `(2k, 2k+1)`. A pair counts as padded only when both of its rows are.
pub fn pair_reduce(tape: &mut Tape, bundle: &FeatureBundle) -> FeatureBundle {
    let rows = bundle.rows(tape);
    assert!(rows % 2 == 0, "pair reduction needs an even row count");
    let half = rows / 2;
    let even: Vec<usize> = (0..half).map(|k| 2 * k).collect();
    let odd: Vec<usize> = (0..half).map(|k| 2 * k + 1).collect();

    let reduce = |v: Var, tape: &mut Tape| {
        let e = tape.gather_rows(v, &even);
        let o = tape.gather_rows(v, &odd);
        let s = tape.add(e, o);
        tape.scale(s, 0.5)
    };

    let z = reduce(bundle.z, tape);
    let per_layer = bundle
        .per_layer
        .iter()
        .map(|&l| reduce(l, tape))
        .collect();
    let p = reduce(bundle.p, tape);
    let pad_mask = (0..half)
        .map(|k| bundle.pad_mask[2 * k] && bundle.pad_mask[2 * k + 1])
        .collect();
    FeatureBundle {
        z,
        per_layer,
        p,
        pad_mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_reduce_averages_adjacent_rows() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]));
        let p = tape.leaf(Tensor::from_vec(4, 2, vec![0.0; 8]));
        let bundle = FeatureBundle {
            z,
            per_layer: vec![z],
            p,
            pad_mask: vec![false, false, true, true],
        };
        let red = pair_reduce(&mut tape, &bundle);
        let zv = tape.value(red.z);
        assert_eq!(zv.rows, 2);
        assert_eq!(zv.row_slice(0), &[2.0, 3.0]);
        assert_eq!(zv.row_slice(1), &[20.0, 30.0]);
        assert_eq!(red.pad_mask, vec![false, true]);
        assert_eq!(red.active(), 1);
    }

    #[test]
    fn pair_reduce_gradient_splits_evenly() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]));
        let p = tape.leaf(Tensor::zeros(4, 1));
        let bundle = FeatureBundle {
            z,
            per_layer: vec![z],
            p,
            pad_mask: vec![false; 4],
        };
        let red = pair_reduce(&mut tape, &bundle);
        let loss = tape.sum_all(red.z);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(&tape, z).data, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn mask_column_marks_active_rows() {
        let m = mask_column(&[false, true, false]);
        assert_eq!(m.data, vec![1.0, 0.0, 1.0]);
    }
}
