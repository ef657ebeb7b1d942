//! Bipartite matching between predicted human-object pairs and ground truth.
//!
//! Matching runs on detached values (plain `f64`), mirroring the usual
//! set-prediction recipe: the assignment is a structural choice, and only the
//! losses computed afterwards carry gradients.

use crate::error::{Error, Result};
use crate::geometry::{self, Box};
use serde::{Deserialize, Serialize};

/// One annotated human-object pair. `hoi` lists the positive interaction
/// class ids (a sparse multi-hot over `n_hoi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPair {
    pub human: Box,
    pub object: Box,
    pub object_class: usize,
    pub hoi: Vec<usize>,
}

impl GroundTruthPair {
    pub fn multi_hot(&self, n_hoi: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_hoi];
        for &c in &self.hoi {
            v[c] = 1.0;
        }
        v
    }
}

/// All annotated pairs of one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub pairs: Vec<GroundTruthPair>,
}

impl GroundTruthSet {
    pub fn validate(&self, n_obj: usize, n_hoi: usize) -> Result<()> {
        for (g, p) in self.pairs.iter().enumerate() {
            if p.object_class >= n_obj {
                return Err(Error::Dataset {
                    path: std::path::PathBuf::new(),
                    line: 0,
                    message: format!(
                        "gt pair {g}: object class {} out of range 0..{n_obj}",
                        p.object_class
                    ),
                });
            }
            if let Some(&c) = p.hoi.iter().find(|&&c| c >= n_hoi) {
                return Err(Error::Dataset {
                    path: std::path::PathBuf::new(),
                    line: 0,
                    message: format!("gt pair {g}: hoi class {c} out of range 0..{n_hoi}"),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Detached view of one predicted pair, used only to build matching costs.
#[derive(Debug, Clone)]
pub struct PairSnapshot {
    pub human: Box,
    pub object: Box,
    /// Softmax over object classes plus a trailing no-object slot.
    pub object_probs: Vec<f64>,
    /// Per-class sigmoid interaction scores.
    pub hoi_scores: Vec<f64>,
}

/// Cost coefficients for the assignment. The values follow the common
/// DETR-for-HOI convention and live in config, not in code paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub object_class: f64,
    pub interaction: f64,
    pub box_l1: f64,
    pub giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            object_class: 1.0,
            interaction: 1.0,
            box_l1: 2.5,
            giou: 1.0,
        }
    }
}

/// One-to-one assignment. `pairs` holds `(query index, gt index)`;
/// `unmatched` lists queries assigned to no-object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl MatchResult {
    /// GT index matched to query `k`, if any.
    pub fn gt_for_query(&self, k: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(q, _)| q == k).map(|&(_, g)| g)
    }
}

/// Matching cost between one predicted pair and one GT pair.
pub fn pair_cost(pred: &PairSnapshot, gt: &GroundTruthPair, w: &CostWeights) -> f64 {
    let cls = -pred.object_probs[gt.object_class];
    let hoi = if gt.hoi.is_empty() {
        0.0
    } else {
        let s: f64 = gt.hoi.iter().map(|&c| pred.hoi_scores[c]).sum();
        -s / gt.hoi.len() as f64
    };
    let boxes = geometry::box_distance(&pred.human, &gt.human)
        + geometry::box_distance(&pred.object, &gt.object);
    let giou = -geometry::giou(&pred.human, &gt.human) - geometry::giou(&pred.object, &gt.object);
    w.object_class * cls + w.interaction * hoi + w.box_l1 * boxes + w.giou * giou
}

/// Matches predictions to ground truth by minimum total cost.
pub fn match_predictions(
    preds: &[PairSnapshot],
    gts: &GroundTruthSet,
    weights: &CostWeights,
) -> MatchResult {
    if gts.is_empty() || preds.is_empty() {
        return MatchResult {
            pairs: Vec::new(),
            unmatched: (0..preds.len()).collect(),
        };
    }
    let cost: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.pairs.iter().map(|g| pair_cost(p, g, weights)).collect())
        .collect();
    let assignment = solve_assignment(&cost);
    let mut pairs: Vec<(usize, usize)> = assignment;
    pairs.sort_unstable();
    let matched: std::collections::HashSet<usize> = pairs.iter().map(|&(q, _)| q).collect();
    let unmatched = (0..preds.len()).filter(|q| !matched.contains(q)).collect();
    MatchResult { pairs, unmatched }
}

/// Minimum-cost one-to-one assignment on a rectangular cost matrix
/// (`cost[row][col]`). Returns `min(rows, cols)` `(row, col)` pairs with the
/// smallest total cost, found by shortest augmenting paths over row and
/// column potentials.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return Vec::new();
    }

    // The augmenting-path formulation wants rows <= cols; transpose if not.
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        return solve_assignment(&t)
            .into_iter()
            .map(|(i, j)| (j, i))
            .collect();
    }

    let n = rows;
    let m = cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut col_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for j in 1..=m {
        if col_row[j] != 0 {
            out.push((col_row[j] - 1, j - 1));
        }
    }
    out.sort_unstable();
    out
}

/// Total cost of an assignment under a matrix.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// Exhaustive minimum over all one-to-one assignments; only usable for tiny
/// matrices. Kept public so oracle tests compare against it.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    if rows == 0 || cost[0].is_empty() {
        return 0.0;
    }
    let cols = cost[0].len();
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        return brute_force_min_cost(&t);
    }
    assert!(cols <= 8, "brute force oracle limited to 8 columns");
    let mut best = f64::INFINITY;
    let mut chosen = vec![false; cols];
    fn rec(cost: &[Vec<f64>], row: usize, acc: f64, chosen: &mut [bool], best: &mut f64) {
        if row == cost.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for j in 0..chosen.len() {
            if !chosen[j] {
                chosen[j] = true;
                rec(cost, row + 1, acc + cost[row][j], chosen, best);
                chosen[j] = false;
            }
        }
    }
    rec(cost, 0, 0.0, &mut chosen, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn two_by_two_example() {
        let cost = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let pairs = solve_assignment(&cost);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert!((assignment_cost(&cost, &pairs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rectangular_keeps_min_side() {
        let cost = vec![
            vec![5.0],
            vec![1.0],
            vec![3.0],
        ];
        let pairs = solve_assignment(&cost);
        assert_eq!(pairs, vec![(1, 0)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = crate::rng::stream(17, 0);
        for trial in 0..60 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let pairs = solve_assignment(&cost);
            assert_eq!(pairs.len(), rows.min(cols));
            let got = assignment_cost(&cost, &pairs);
            let want = brute_force_min_cost(&cost);
            assert!(
                (got - want).abs() < 1e-9,
                "trial {trial}: solver {got} vs brute force {want} on {cost:?}"
            );
        }
    }

    fn snap(hx: f64, hy: f64, ox: f64, oy: f64, cls: usize, n_obj: usize) -> PairSnapshot {
        let mut probs = vec![0.05; n_obj + 1];
        probs[cls] = 0.9;
        PairSnapshot {
            human: Box::new(hx, hy, 0.2, 0.2).unwrap(),
            object: Box::new(ox, oy, 0.2, 0.2).unwrap(),
            object_probs: probs,
            hoi_scores: vec![0.5; 4],
        }
    }

    fn gt(hx: f64, hy: f64, ox: f64, oy: f64, cls: usize) -> GroundTruthPair {
        GroundTruthPair {
            human: Box::new(hx, hy, 0.2, 0.2).unwrap(),
            object: Box::new(ox, oy, 0.2, 0.2).unwrap(),
            object_class: cls,
            hoi: vec![1],
        }
    }

    #[test]
    fn single_gt_yields_single_pair() {
        let preds = vec![
            snap(0.2, 0.2, 0.3, 0.3, 0, 3),
            snap(0.7, 0.7, 0.8, 0.8, 1, 3),
            snap(0.5, 0.5, 0.5, 0.5, 2, 3),
        ];
        let gts = GroundTruthSet {
            pairs: vec![gt(0.7, 0.7, 0.8, 0.8, 1)],
        };
        let m = match_predictions(&preds, &gts, &CostWeights::default());
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched, vec![0, 2]);
        assert_eq!(m.gt_for_query(1), Some(0));
        assert_eq!(m.gt_for_query(0), None);
    }

    #[test]
    fn empty_gt_leaves_everything_unmatched() {
        let preds = vec![snap(0.2, 0.2, 0.3, 0.3, 0, 3)];
        let m = match_predictions(&preds, &GroundTruthSet::default(), &CostWeights::default());
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched, vec![0]);
    }

    #[test]
    fn gt_permutation_preserves_total_cost() {
        let mut rng = crate::rng::stream(18, 0);
        let w = CostWeights::default();
        for _ in 0..20 {
            let preds: Vec<PairSnapshot> = (0..4)
                .map(|_| {
                    let h = crate::rng::random_box(&mut rng);
                    let o = crate::rng::random_box(&mut rng);
                    PairSnapshot {
                        human: h,
                        object: o,
                        object_probs: vec![0.25; 4],
                        hoi_scores: vec![rng.random_range(0.0..1.0); 4],
                    }
                })
                .collect();
            let gts: Vec<GroundTruthPair> = (0..3)
                .map(|i| GroundTruthPair {
                    human: crate::rng::random_box(&mut rng),
                    object: crate::rng::random_box(&mut rng),
                    object_class: i,
                    hoi: vec![i],
                })
                .collect();

            let forward = GroundTruthSet { pairs: gts.clone() };
            let mut reversed_pairs = gts.clone();
            reversed_pairs.reverse();
            let reversed = GroundTruthSet {
                pairs: reversed_pairs,
            };

            let cost_of = |set: &GroundTruthSet| {
                let m = match_predictions(&preds, set, &w);
                m.pairs
                    .iter()
                    .map(|&(q, g)| pair_cost(&preds[q], &set.pairs[g], &w))
                    .sum::<f64>()
            };
            assert!((cost_of(&forward) - cost_of(&reversed)).abs() < 1e-9);
        }
    }

    #[test]
    fn gt_validation_rejects_out_of_range() {
        let ok = GroundTruthSet {
            pairs: vec![gt(0.3, 0.3, 0.5, 0.5, 2)],
        };
        assert!(ok.validate(3, 4).is_ok());
        assert!(ok.validate(2, 4).is_err());
        let bad_hoi = GroundTruthSet {
            pairs: vec![GroundTruthPair {
                hoi: vec![9],
                ..gt(0.3, 0.3, 0.5, 0.5, 0)
            }],
        };
        assert!(bad_hoi.validate(3, 4).is_err());
    }
}
