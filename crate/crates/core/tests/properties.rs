//! Randomized invariant checks over the numeric core: geometry bounds,
//! assignment optimality, loss ranges and serialization stability.

use hoi_core::autodiff::{Tape, Tensor};
use hoi_core::constraints::{feature_constraint, region_constraint, ConstraintConfig};
use hoi_core::data::RunConfig;
use hoi_core::eval::{compute_map, ApScheme, CategoryMeta, DetectionRecord};
use hoi_core::explorer::softmax_slice;
use hoi_core::geometry::{self, Box};
use hoi_core::loss::{hoi_loss, HoiLossConfig, PredVars};
use hoi_core::matching::{
    assignment_cost, brute_force_min_cost, match_predictions, solve_assignment, CostWeights,
    GroundTruthPair, GroundTruthSet, PairSnapshot,
};
use hoi_core::model::FeatureBundle;
use indexmap::IndexMap;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Box> {
    (0.05f64..0.95, 0.05f64..0.95, 0.02f64..0.6, 0.02f64..0.6)
        .prop_map(|(cx, cy, w, h)| Box::new(cx, cy, w, h).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn giou_stays_in_range_and_under_iou(a in arb_box(), b in arb_box()) {
        let g = geometry::giou(&a, &b);
        let i = geometry::iou(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&g), "giou {g}");
        prop_assert!((0.0..=1.0).contains(&i), "iou {i}");
        prop_assert!(g <= i + 1e-12, "giou {g} exceeds iou {i}");
        prop_assert!((geometry::giou(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((g - geometry::giou(&b, &a)).abs() < 1e-12, "symmetry");
    }

    #[test]
    fn box_corner_round_trip(b in arb_box()) {
        let (x0, y0, x1, y1) = b.corners();
        let back = Box::from_corners(x0, y0, x1, y1).unwrap();
        prop_assert!((back.cx - b.cx).abs() < 1e-12);
        prop_assert!((back.cy - b.cy).abs() < 1e-12);
        prop_assert!((back.w - b.w).abs() < 1e-12);
        prop_assert!((back.h - b.h).abs() < 1e-12);
    }

    #[test]
    fn assignment_is_optimal_on_small_matrices(
        rows in 1usize..=5,
        cols in 1usize..=5,
        raw in proptest::collection::vec(-10.0f64..10.0, 25),
    ) {
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..cols).map(|c| raw[r * 5 + c]).collect())
            .collect();
        let pairs = solve_assignment(&cost);
        prop_assert_eq!(pairs.len(), rows.min(cols));
        let total = assignment_cost(&cost, &pairs);
        let best = brute_force_min_cost(&cost);
        prop_assert!((total - best).abs() < 1e-9, "solver {total} vs brute force {best}");
    }

    #[test]
    fn assignment_total_is_invariant_under_row_order(
        raw in proptest::collection::vec(-5.0f64..5.0, 16),
        perm_seed in 0usize..24,
    ) {
        let cost: Vec<Vec<f64>> = (0..4).map(|r| raw[r * 4..(r + 1) * 4].to_vec()).collect();
        let mut order = [0usize, 1, 2, 3];
        order.rotate_left(perm_seed % 4);
        if perm_seed % 2 == 1 {
            order.swap(0, 1);
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&r| cost[r].clone()).collect();
        let a = assignment_cost(&cost, &solve_assignment(&cost));
        let b = assignment_cost(&shuffled, &solve_assignment(&shuffled));
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn distance_weight_lies_in_unit_interval(
        a in arb_box(),
        b in arb_box(),
        tau in 0.05f64..5.0,
    ) {
        let w = geometry::dynamic_distance_weight(&a, &b, tau, 1e-8).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0, "weight {w}");
        // Farther boxes never weigh more under the same temperature.
        let far = Box::new(
            (a.cx + 0.9).min(1.9), (a.cy + 0.9).min(1.9), a.w, a.h,
        ).unwrap();
        if geometry::box_distance(&far, &b) > geometry::box_distance(&a, &b) {
            let wf = geometry::dynamic_distance_weight(&far, &b, tau, 1e-8).unwrap();
            prop_assert!(wf <= w + 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(logits in proptest::collection::vec(-30.0f64..30.0, 1..12)) {
        let p = softmax_slice(&logits);
        prop_assert_eq!(p.len(), logits.len());
        prop_assert!(p.iter().all(|&x| x >= 0.0 && x <= 1.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let arg_logit = (0..logits.len()).max_by(|&i, &j| logits[i].partial_cmp(&logits[j]).unwrap());
        let arg_prob = (0..p.len()).max_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap());
        prop_assert_eq!(arg_logit, arg_prob);
    }

    #[test]
    fn feature_constraint_is_a_mean_absolute_similarity(
        seed in 0u64..500,
        rows in 2usize..6,
        dim in 2usize..8,
    ) {
        let mut rng = hoi_core::rng::stream(seed, 9);
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, rng: &mut rand_chacha::ChaCha8Rng| {
            let z = tape.constant(Tensor::randn(rows, dim, 1.0, rng));
            let p = tape.constant(Tensor::zeros(rows, dim));
            FeatureBundle { z, per_layer: vec![z], p, pad_mask: vec![false; rows] }
        };
        let ins = mk(&mut tape, &mut rng);
        let ctx = mk(&mut tape, &mut rng);
        let v = feature_constraint(&mut tape, &ins, &ctx, &ConstraintConfig::default());
        let x = tape.value(v).item();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&x), "fc {x}");
    }

    #[test]
    fn region_constraint_lies_in_unit_interval(
        seed in 0u64..500,
        rows in 1usize..6,
        dim in 2usize..8,
    ) {
        let mut rng = hoi_core::rng::stream(seed, 10);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::randn(rows, dim, 1.0, &mut rng));
        let b = tape.constant(Tensor::randn(rows, dim, 1.0, &mut rng));
        let v = region_constraint(&mut tape, a, b, &vec![false; rows]);
        let x = tape.value(v).item();
        prop_assert!(x > 0.0 && x <= 1.0, "rc {x}");
        let same = region_constraint(&mut tape, a, a, &vec![false; rows]);
        prop_assert!((tape.value(same).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detection_loss_is_finite_and_non_negative(
        seed in 0u64..300,
        queries in 2usize..6,
        gts_n in 1usize..4,
    ) {
        let mut rng = hoi_core::rng::stream(seed, 11);
        let n_obj = 3usize;
        let n_hoi = 4usize;
        let snaps: Vec<PairSnapshot> = (0..queries)
            .map(|_| {
                let logits: Vec<f64> = (0..n_obj + 1)
                    .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
                    .collect();
                PairSnapshot {
                    human: hoi_core::rng::random_box(&mut rng),
                    object: hoi_core::rng::random_box(&mut rng),
                    object_probs: softmax_slice(&logits),
                    hoi_scores: (0..n_hoi)
                        .map(|_| rand::Rng::random_range(&mut rng, 0.01..0.99))
                        .collect(),
                }
            })
            .collect();
        let gts = GroundTruthSet {
            pairs: (0..gts_n)
                .map(|g| GroundTruthPair {
                    human: hoi_core::rng::random_box(&mut rng),
                    object: hoi_core::rng::random_box(&mut rng),
                    object_class: g % n_obj,
                    hoi: vec![g % n_hoi],
                })
                .collect(),
        };
        let m = match_predictions(&snaps, &gts, &CostWeights::default());

        let mut tape = Tape::new();
        let boxes = |tape: &mut Tape, rng: &mut rand_chacha::ChaCha8Rng| {
            let t = Tensor::from_fn(queries, 4, |_, c| {
                if c < 2 { rand::Rng::random_range(rng, 0.2..0.8) }
                else { rand::Rng::random_range(rng, 0.05..0.5) }
            });
            tape.constant(t)
        };
        let preds = PredVars {
            b_h: boxes(&mut tape, &mut rng),
            b_o: boxes(&mut tape, &mut rng),
            c_o: {
                let t = Tensor::randn(queries, n_obj + 1, 1.0, &mut rng);
                tape.constant(t)
            },
            c_hoi: {
                let t = Tensor::randn(queries, n_hoi, 1.0, &mut rng);
                tape.constant(t)
            },
        };
        let lb = hoi_loss(&mut tape, &preds, &gts, &m, &HoiLossConfig::default());
        let total = tape.value(lb.total).item();
        prop_assert!(total.is_finite() && total >= 0.0, "loss {total}");
        for part in [lb.box_l1, lb.giou, lb.object_ce, lb.interaction] {
            let v = tape.value(part).item();
            prop_assert!(v.is_finite(), "component {v}");
        }
    }

    #[test]
    fn average_precision_is_bounded(
        seed in 0u64..300,
        dets_n in 0usize..12,
        gts_n in 1usize..5,
    ) {
        let mut rng = hoi_core::rng::stream(seed, 12);
        let meta = CategoryMeta {
            pairs: vec![(0, 0), (0, 1), (1, 0)],
            train_counts: vec![5, 20, 8],
        };
        let mut gts: IndexMap<String, GroundTruthSet> = IndexMap::new();
        gts.insert(
            "img".into(),
            GroundTruthSet {
                pairs: (0..gts_n)
                    .map(|g| GroundTruthPair {
                        human: hoi_core::rng::random_box(&mut rng),
                        object: hoi_core::rng::random_box(&mut rng),
                        object_class: g % 2,
                        hoi: vec![g % 3],
                    })
                    .collect(),
            },
        );
        let dets: Vec<DetectionRecord> = (0..dets_n)
            .map(|i| DetectionRecord {
                image_id: "img".into(),
                hoi_id: i % 3,
                score: rand::Rng::random_range(&mut rng, 0.0..1.0),
                human: hoi_core::rng::random_box(&mut rng),
                object: hoi_core::rng::random_box(&mut rng),
            })
            .collect();
        for scheme in [ApScheme::AllPoints, ApScheme::ElevenPoint] {
            let rep = compute_map(&dets, &gts, &meta, 0.5, None, scheme).unwrap();
            prop_assert!((0.0..=1.0).contains(&rep.full), "map {}", rep.full);
            for ap in rep.per_category.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(ap), "ap {ap}");
            }
        }
    }

    #[test]
    fn config_serialization_is_stable(
        seed in 1u64..1_000_000,
        lr in 1e-6f64..1.0,
        epochs in 1usize..200,
        lambda in 0.0f64..10.0,
    ) {
        let mut cfg = RunConfig::desk();
        cfg.seed = seed;
        cfg.optim.lr = lr;
        cfg.train.epochs = epochs;
        cfg.constraints.lambda_fc = lambda;
        let once = cfg.to_toml().unwrap();
        let twice = RunConfig::from_toml(&once).unwrap().to_toml().unwrap();
        prop_assert_eq!(once, twice);
    }
}
