//! Detection scoring and mAP for HOI triplets: greedy IoU matching per
//! category, precision-recall integration with full/rare/non-rare splits,
//! optional image-subset restriction, and the text dump formats used by the
//! CLI.

use crate::error::{Error, Result};
use crate::geometry::{iou, Box};
use crate::matching::{GroundTruthSet, PairSnapshot};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Triplet-category table: which object and verb make up each interaction
/// class, and how often each appeared in training (for the rare split).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMeta {
    /// `hoi_id -> (object_class, verb_class)`.
    pub pairs: Vec<(usize, usize)>,
    pub train_counts: Vec<usize>,
}

/// A triplet category is rare when it has fewer than this many training
/// instances.
pub const RARE_THRESHOLD: usize = 10;

impl CategoryMeta {
    pub fn n_hoi(&self) -> usize {
        self.pairs.len()
    }

    pub fn object_of(&self, hoi: usize) -> usize {
        self.pairs[hoi].0
    }

    pub fn verb_of(&self, hoi: usize) -> usize {
        self.pairs[hoi].1
    }

    pub fn is_rare(&self, hoi: usize) -> bool {
        self.train_counts[hoi] < RARE_THRESHOLD
    }

    pub fn validate(&self, n_obj: usize, n_verb: usize) -> Result<()> {
        if self.train_counts.len() != self.pairs.len() {
            return Err(Error::Config(format!(
                "category meta: {} pairs but {} counts",
                self.pairs.len(),
                self.train_counts.len()
            )));
        }
        for (i, &(o, v)) in self.pairs.iter().enumerate() {
            if o >= n_obj || v >= n_verb {
                return Err(Error::Config(format!(
                    "hoi {i}: object {o} or verb {v} out of range ({n_obj} objects, {n_verb} verbs)"
                )));
            }
        }
        Ok(())
    }
}

/// One ranked triplet detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub hoi_id: usize,
    pub score: f64,
    pub human: Box,
    pub object: Box,
}

/// Converts one image's query snapshots into ranked detections. A query
/// whose most likely object class is no-object emits nothing; otherwise
/// every interaction category is scored as interaction probability times
/// the probability of its compatible object class, and the best `top_k`
/// detections are kept, sorted by descending score.
pub fn score_predictions(
    image_id: &str,
    snaps: &[PairSnapshot],
    meta: &CategoryMeta,
    top_k: usize,
) -> Vec<DetectionRecord> {
    let mut records = Vec::new();
    for snap in snaps {
        let no_object = snap.object_probs.len() - 1;
        let argmax = snap
            .object_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if argmax == no_object {
            continue;
        }
        for (hoi_id, &(obj, _)) in meta.pairs.iter().enumerate() {
            let score = snap.hoi_scores[hoi_id] * snap.object_probs[obj];
            records.push(DetectionRecord {
                image_id: image_id.to_string(),
                hoi_id,
                score,
                human: snap.human,
                object: snap.object,
            });
        }
    }
    records.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.hoi_id.cmp(&b.hoi_id))
    });
    records.truncate(top_k);
    records
}

/// Precision-recall integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApScheme {
    AllPoints,
    ElevenPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapReport {
    pub full: f64,
    pub rare: Option<f64>,
    pub non_rare: Option<f64>,
    /// AP per category; `None` when the category has no GT in the
    /// evaluated set (excluded from every mean).
    pub per_category: Vec<Option<f64>>,
    pub evaluated_images: usize,
    pub gt_instances: usize,
}

/// mAP over the given detections and ground truth. A detection is a true
/// positive when both its human and object boxes clear `iou_thresh` against
/// an unmatched GT pair of the same category in the same image; matching is
/// greedy by descending score. `subset` restricts both sides to the listed
/// image ids.
pub fn compute_map(
    dets: &[DetectionRecord],
    gts: &IndexMap<String, GroundTruthSet>,
    meta: &CategoryMeta,
    iou_thresh: f64,
    subset: Option<&[String]>,
    scheme: ApScheme,
) -> Result<MapReport> {
    let images: Vec<&str> = match subset {
        Some(ids) => {
            if ids.is_empty() {
                return Err(Error::Eval("empty evaluation subset".into()));
            }
            for id in ids {
                if !gts.contains_key(id) {
                    return Err(Error::UnknownImage(id.clone()));
                }
            }
            ids.iter().map(String::as_str).collect()
        }
        None => gts.keys().map(String::as_str).collect(),
    };
    let in_scope: HashMap<&str, usize> =
        images.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    // GT instances per category: (image, pair index) for every pair whose
    // interaction list contains the category
    let n_hoi = meta.n_hoi();
    let mut gt_by_cat: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_hoi];
    for (&img, &slot) in in_scope.iter() {
        for (pi, pair) in gts[img].pairs.iter().enumerate() {
            for &c in &pair.hoi {
                gt_by_cat[c].push((slot, pi));
            }
        }
    }
    let gt_instances: usize = gt_by_cat.iter().map(Vec::len).sum();
    if gt_instances == 0 {
        return Err(Error::Eval("no ground-truth instances in evaluated set".into()));
    }

    let mut dets_by_cat: Vec<Vec<&DetectionRecord>> = vec![Vec::new(); n_hoi];
    for d in dets {
        if d.hoi_id < n_hoi && in_scope.contains_key(d.image_id.as_str()) {
            dets_by_cat[d.hoi_id].push(d);
        }
    }

    let mut per_category: Vec<Option<f64>> = vec![None; n_hoi];
    for c in 0..n_hoi {
        if gt_by_cat[c].is_empty() {
            continue;
        }
        per_category[c] = Some(category_ap(
            &mut dets_by_cat[c],
            &gt_by_cat[c],
            gts,
            &images,
            iou_thresh,
            scheme,
        ));
    }

    let mean_over = |keep: &dyn Fn(usize) -> bool| {
        let vals: Vec<f64> = per_category
            .iter()
            .enumerate()
            .filter_map(|(c, ap)| ap.filter(|_| keep(c)))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let full = mean_over(&|_| true).unwrap_or(0.0);
    let rare = mean_over(&|c| meta.is_rare(c));
    let non_rare = mean_over(&|c| !meta.is_rare(c));

    Ok(MapReport {
        full,
        rare,
        non_rare,
        per_category,
        evaluated_images: images.len(),
        gt_instances,
    })
}

fn category_ap(
    dets: &mut Vec<&DetectionRecord>,
    gt_list: &[(usize, usize)],
    gts: &IndexMap<String, GroundTruthSet>,
    images: &[&str],
    iou_thresh: f64,
    scheme: ApScheme,
) -> f64 {
    // submission-order-independent ranking: ties broken by image id and
    // box geometry
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| box_key(&a.human).partial_cmp(&box_key(&b.human)).unwrap())
            .then_with(|| box_key(&a.object).partial_cmp(&box_key(&b.object)).unwrap())
    });

    let mut used = vec![false; gt_list.len()];
    let mut tp = Vec::with_capacity(dets.len());
    for d in dets.iter() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, &(slot, pi)) in gt_list.iter().enumerate() {
            if used[gi] || images[slot] != d.image_id {
                continue;
            }
            let pair = &gts[images[slot]].pairs[pi];
            let ih = iou(&d.human, &pair.human);
            let io = iou(&d.object, &pair.object);
            if ih > iou_thresh && io > iou_thresh {
                let q = ih.min(io);
                if best.map(|(_, bq)| q > bq).unwrap_or(true) {
                    best = Some((gi, q));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                used[gi] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }

    let n_gt = gt_list.len() as f64;
    let mut cum_tp = 0.0;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    for (i, &hit) in tp.iter().enumerate() {
        if hit {
            cum_tp += 1.0;
        }
        recall.push(cum_tp / n_gt);
        precision.push(cum_tp / (i as f64 + 1.0));
    }
    match scheme {
        ApScheme::AllPoints => all_points_ap(&recall, &precision),
        ApScheme::ElevenPoint => eleven_point_ap(&recall, &precision),
    }
}

fn box_key(b: &Box) -> (f64, f64, f64, f64) {
    (b.cx, b.cy, b.w, b.h)
}

fn all_points_ap(recall: &[f64], precision: &[f64]) -> f64 {
    if recall.is_empty() {
        return 0.0;
    }
    // precision envelope from the right, then area under the step curve
    let mut env = precision.to_vec();
    for i in (0..env.len() - 1).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..recall.len() {
        if recall[i] > prev_r {
            ap += (recall[i] - prev_r) * env[i];
            prev_r = recall[i];
        }
    }
    ap
}

fn eleven_point_ap(recall: &[f64], precision: &[f64]) -> f64 {
    if recall.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let p = recall
            .iter()
            .zip(precision)
            .filter(|&(&r, _)| r >= t - 1e-12)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 11.0
}

/// Fraction of evaluated images whose single best detection carries a verb
/// present in that image's ground truth. Images without detections count as
/// wrong.
pub fn top1_verb_accuracy(
    dets: &[DetectionRecord],
    gts: &IndexMap<String, GroundTruthSet>,
    meta: &CategoryMeta,
    subset: Option<&[String]>,
) -> Result<(usize, usize)> {
    let images: Vec<&str> = match subset {
        Some(ids) => {
            if ids.is_empty() {
                return Err(Error::Eval("empty evaluation subset".into()));
            }
            ids.iter().map(String::as_str).collect()
        }
        None => gts.keys().map(String::as_str).collect(),
    };
    let mut best: HashMap<&str, &DetectionRecord> = HashMap::new();
    for d in dets {
        best.entry(d.image_id.as_str())
            .and_modify(|cur| {
                if d.score > cur.score {
                    *cur = d;
                }
            })
            .or_insert(d);
    }
    let mut correct = 0;
    let mut total = 0;
    for img in images {
        let gt = gts
            .get(img)
            .ok_or_else(|| Error::UnknownImage(img.to_string()))?;
        if gt.pairs.is_empty() {
            continue;
        }
        total += 1;
        if let Some(d) = best.get(img) {
            let verb = meta.verb_of(d.hoi_id);
            let hit = gt
                .pairs
                .iter()
                .flat_map(|p| p.hoi.iter())
                .any(|&c| meta.verb_of(c) == verb);
            if hit {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Writes detections one per line: image id, category, score, then the two
/// boxes as corner coordinates. Floats use shortest round-trip formatting.
pub fn write_detections(path: &Path, dets: &[DetectionRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for d in dets {
        let (hx0, hy0, hx1, hy1) = d.human.corners();
        let (ox0, oy0, ox1, oy1) = d.object.corners();
        writeln!(
            f,
            "{} {} {} {} {} {} {} {} {} {} {}",
            d.image_id, d.hoi_id, d.score, hx0, hy0, hx1, hy1, ox0, oy0, ox1, oy1
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 11 {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                line: ln + 1,
                message: format!("expected 11 fields, found {}", parts.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Dataset {
                path: path.to_path_buf(),
                line: ln + 1,
                message: format!("bad {what}: {s}"),
            })
        };
        let nums: Vec<f64> = parts[2..]
            .iter()
            .map(|s| parse(s, "float"))
            .collect::<Result<_>>()?;
        out.push(DetectionRecord {
            image_id: parts[0].to_string(),
            hoi_id: parts[1].parse().map_err(|_| Error::Dataset {
                path: path.to_path_buf(),
                line: ln + 1,
                message: format!("bad category id: {}", parts[1]),
            })?,
            score: nums[0],
            human: Box::from_corners(nums[1], nums[2], nums[3], nums[4])?,
            object: Box::from_corners(nums[5], nums[6], nums[7], nums[8])?,
        });
    }
    Ok(out)
}

/// Reads an image-subset file: one id per line, blanks ignored.
pub fn read_subset(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            ids.push(t.to_string());
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::GroundTruthPair;

    fn meta4() -> CategoryMeta {
        // 4 categories over 2 objects x 2 verbs
        CategoryMeta {
            pairs: vec![(0, 0), (0, 1), (1, 0), (1, 1)],
            train_counts: vec![50, 3, 50, 50],
        }
    }

    fn gt_image(pairs: Vec<GroundTruthPair>) -> GroundTruthSet {
        GroundTruthSet { pairs }
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> Box {
        Box::from_corners(x0, y0, x1, y1).unwrap()
    }

    fn det(img: &str, hoi: usize, score: f64, h: Box, o: Box) -> DetectionRecord {
        DetectionRecord {
            image_id: img.into(),
            hoi_id: hoi,
            score,
            human: h,
            object: o,
        }
    }

    fn one_image_gts() -> IndexMap<String, GroundTruthSet> {
        let mut m = IndexMap::new();
        m.insert(
            "a".to_string(),
            gt_image(vec![GroundTruthPair {
                human: bx(0.1, 0.1, 0.3, 0.3),
                object: bx(0.5, 0.5, 0.7, 0.7),
                object_class: 0,
                hoi: vec![0],
            }]),
        );
        m
    }

    #[test]
    fn single_correct_detection_scores_full_ap() {
        let gts = one_image_gts();
        let dets = vec![det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        assert_eq!(r.per_category[0], Some(1.0));
        assert_eq!(r.full, 1.0);
        assert_eq!(r.gt_instances, 1);
    }

    #[test]
    fn wrong_then_correct_gives_half_ap() {
        let gts = one_image_gts();
        let dets = vec![
            det("a", 0, 0.9, bx(0.6, 0.6, 0.9, 0.9), bx(0.0, 0.0, 0.2, 0.2)),
            det("a", 0, 0.5, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7)),
        ];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        assert_eq!(r.per_category[0], Some(0.5));
    }

    #[test]
    fn low_human_iou_is_a_false_positive() {
        // human boxes [0,0,2,2] vs [1,1,3,3] scaled into unit frame:
        // IoU = 1/7 < 0.5, object exact
        let mut gts = IndexMap::new();
        gts.insert(
            "a".to_string(),
            gt_image(vec![GroundTruthPair {
                human: bx(0.0, 0.0, 0.2, 0.2),
                object: bx(0.5, 0.5, 0.7, 0.7),
                object_class: 0,
                hoi: vec![0],
            }]),
        );
        let dets = vec![det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        assert_eq!(r.per_category[0], Some(0.0));
    }

    #[test]
    fn duplicates_on_one_gt_yield_one_tp() {
        let gts = one_image_gts();
        let d = det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7));
        let dets = vec![d.clone(), DetectionRecord { score: 0.8, ..d.clone() }, DetectionRecord { score: 0.7, ..d }];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        // first hit is TP at precision 1, duplicates are FPs after recall 1
        assert_eq!(r.per_category[0], Some(1.0));
    }

    #[test]
    fn submission_order_never_matters() {
        let gts = one_image_gts();
        let a = det("a", 0, 0.9, bx(0.6, 0.6, 0.9, 0.9), bx(0.0, 0.0, 0.2, 0.2));
        let b = det("a", 0, 0.5, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7));
        let r1 = compute_map(&[a.clone(), b.clone()], &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        let r2 = compute_map(&[b, a], &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        assert_eq!(r1.per_category, r2.per_category);
    }

    #[test]
    fn subset_all_equals_listed_all() {
        let gts = one_image_gts();
        let dets = vec![det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let all: Vec<String> = gts.keys().cloned().collect();
        let r1 = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        let r2 = compute_map(&dets, &gts, &meta4(), 0.5, Some(&all), ApScheme::AllPoints).unwrap();
        assert_eq!(r1.full, r2.full);
        assert_eq!(r1.per_category, r2.per_category);
    }

    #[test]
    fn adding_correct_detection_never_hurts() {
        let mut gts = one_image_gts();
        gts.insert(
            "b".to_string(),
            gt_image(vec![GroundTruthPair {
                human: bx(0.2, 0.2, 0.4, 0.4),
                object: bx(0.6, 0.6, 0.8, 0.8),
                object_class: 1,
                hoi: vec![2],
            }]),
        );
        let base = vec![det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let mut more = base.clone();
        more.push(det("b", 2, 0.8, bx(0.2, 0.2, 0.4, 0.4), bx(0.6, 0.6, 0.8, 0.8)));
        let r1 = compute_map(&base, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        let r2 = compute_map(&more, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        assert!(r2.full >= r1.full);
        assert!(r2.per_category[2].unwrap() >= r1.per_category[2].unwrap());
    }

    #[test]
    fn rare_split_uses_training_counts() {
        let mut gts = one_image_gts();
        gts.insert(
            "b".to_string(),
            gt_image(vec![GroundTruthPair {
                human: bx(0.2, 0.2, 0.4, 0.4),
                object: bx(0.6, 0.6, 0.8, 0.8),
                object_class: 0,
                hoi: vec![1],
            }]),
        );
        let dets = vec![
            det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7)),
            det("b", 1, 0.8, bx(0.9, 0.2, 0.95, 0.4), bx(0.0, 0.6, 0.1, 0.8)),
        ];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::AllPoints).unwrap();
        // category 1 is rare (3 < 10) and its only detection missed
        assert_eq!(r.rare, Some(0.0));
        assert_eq!(r.non_rare, Some(1.0));
        assert!((r.full - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_and_empty_gt_error() {
        let gts = one_image_gts();
        let dets: Vec<DetectionRecord> = vec![];
        assert!(compute_map(&dets, &gts, &meta4(), 0.5, Some(&[]), ApScheme::AllPoints).is_err());
        let empty: IndexMap<String, GroundTruthSet> = IndexMap::new();
        assert!(compute_map(&dets, &empty, &meta4(), 0.5, None, ApScheme::AllPoints).is_err());
        assert!(compute_map(
            &dets,
            &gts,
            &meta4(),
            0.5,
            Some(&["missing".to_string()]),
            ApScheme::AllPoints
        )
        .is_err());
    }

    #[test]
    fn eleven_point_on_perfect_curve_is_one() {
        let gts = one_image_gts();
        let dets = vec![det("a", 0, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let r = compute_map(&dets, &gts, &meta4(), 0.5, None, ApScheme::ElevenPoint).unwrap();
        assert!((r.per_category[0].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scoring_composes_interaction_and_object_probability() {
        let snap = PairSnapshot {
            human: bx(0.1, 0.1, 0.3, 0.3),
            object: bx(0.5, 0.5, 0.7, 0.7),
            object_probs: vec![0.5, 0.3, 0.2],
            hoi_scores: vec![0.8, 0.1, 0.6, 0.2],
        };
        let dets = score_predictions("img", &[snap], &meta4(), 100);
        assert_eq!(dets.len(), 4);
        assert!((dets[0].score - 0.4).abs() < 1e-12, "0.8 x 0.5");
        assert!(dets.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn no_object_queries_are_dropped() {
        let snap = PairSnapshot {
            human: bx(0.1, 0.1, 0.3, 0.3),
            object: bx(0.5, 0.5, 0.7, 0.7),
            object_probs: vec![0.1, 0.2, 0.7],
            hoi_scores: vec![0.9, 0.9, 0.9, 0.9],
        };
        assert!(score_predictions("img", &[snap], &meta4(), 100).is_empty());
    }

    #[test]
    fn top_k_truncates() {
        let snap = PairSnapshot {
            human: bx(0.1, 0.1, 0.3, 0.3),
            object: bx(0.5, 0.5, 0.7, 0.7),
            object_probs: vec![0.6, 0.3, 0.1],
            hoi_scores: vec![0.8, 0.1, 0.6, 0.2],
        };
        assert_eq!(score_predictions("img", &[snap], &meta4(), 2).len(), 2);
    }

    #[test]
    fn detection_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        let dets = vec![
            det("img_00", 3, 0.123456789, bx(0.1, 0.2, 0.3, 0.4), bx(0.5, 0.6, 0.7, 0.8)),
            det("img_01", 0, 0.5, bx(0.0, 0.0, 1.0, 1.0), bx(0.25, 0.25, 0.75, 0.75)),
        ];
        write_detections(&path, &dets).unwrap();
        let back = read_detections(&path).unwrap();
        assert_eq!(dets.len(), back.len());
        for (a, b) in dets.iter().zip(&back) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.hoi_id, b.hoi_id);
            assert_eq!(a.score, b.score);
            assert!((a.human.cx - b.human.cx).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subset.txt");
        std::fs::write(&path, "img_a\n\nimg_b\n  img_c  \n").unwrap();
        assert_eq!(read_subset(&path).unwrap(), vec!["img_a", "img_b", "img_c"]);
    }

    #[test]
    fn verb_accuracy_counts_top_detection_only() {
        let gts = one_image_gts(); // gt verb 0
        let dets = vec![
            det("a", 1, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7)), // verb 1, top
            det("a", 0, 0.5, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7)), // verb 0
        ];
        let (correct, total) = top1_verb_accuracy(&dets, &gts, &meta4(), None).unwrap();
        assert_eq!((correct, total), (0, 1));
        let dets2 = vec![det("a", 2, 0.9, bx(0.1, 0.1, 0.3, 0.3), bx(0.5, 0.5, 0.7, 0.7))];
        let (correct, total) = top1_verb_accuracy(&dets2, &gts, &meta4(), None).unwrap();
        assert_eq!((correct, total), (1, 1), "hoi 2 carries verb 0");
    }
}
