//! Converter from the common HICO-DET JSON layout (one record per image with
//! `annotations` boxes and `hoi_annotation` triplets, 1-based category ids in
//! the COCO id space) into the internal index format. Library-only: callers
//! supply the JSON text and a category table and write the result with
//! [`crate::data::dataset::write_index`].

use indexmap::{IndexMap, IndexSet};
use serde::Deserialize;

use crate::data::dataset::{EntryLine, HeaderLine, PairLine};
use crate::error::{Error, Result};

/// Category space of the source dataset. `raw_object_ids` aligns with
/// `objects` and carries the sparse ids used inside the annotation files.
#[derive(Debug, Clone, Deserialize)]
pub struct HicoCategories {
    pub objects: Vec<String>,
    /// Sparse source ids, same length and order as `objects`.
    pub raw_object_ids: Vec<usize>,
    pub verbs: Vec<String>,
    /// Interaction table as (object index, verb index), both 0-based.
    pub hoi: Vec<(usize, usize)>,
}

impl HicoCategories {
    pub fn from_json(text: &str) -> Result<Self> {
        let cats: HicoCategories = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("parse category table: {e}")))?;
        cats.validate()?;
        Ok(cats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_object_ids.len() != self.objects.len() {
            return Err(Error::Config(format!(
                "category table: {} objects but {} raw ids",
                self.objects.len(),
                self.raw_object_ids.len()
            )));
        }
        let unique: IndexSet<_> = self.raw_object_ids.iter().collect();
        if unique.len() != self.raw_object_ids.len() {
            return Err(Error::Config("category table: duplicate raw object ids".into()));
        }
        for (i, &(o, v)) in self.hoi.iter().enumerate() {
            if o >= self.objects.len() || v >= self.verbs.len() {
                return Err(Error::Config(format!(
                    "category table: interaction {i} references object {o} / verb {v} out of range"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RawBoxAnn {
    /// Pixel corners (x1, y1, x2, y2).
    bbox: [f64; 4],
    category_id: usize,
}

#[derive(Debug, Deserialize)]
struct RawHoiAnn {
    subject_id: usize,
    object_id: usize,
    /// 1-based verb id.
    category_id: usize,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    file_name: String,
    #[serde(default)]
    img_w: Option<usize>,
    #[serde(default)]
    img_h: Option<usize>,
    annotations: Vec<RawBoxAnn>,
    hoi_annotation: Vec<RawHoiAnn>,
}

fn norm_box(bbox: [f64; 4], w: usize, h: usize) -> [f64; 4] {
    let sx = |v: f64| (v / w as f64).clamp(0.0, 1.0);
    let sy = |v: f64| (v / h as f64).clamp(0.0, 1.0);
    let (x0, x1) = if bbox[0] <= bbox[2] {
        (bbox[0], bbox[2])
    } else {
        (bbox[2], bbox[0])
    };
    let (y0, y1) = if bbox[1] <= bbox[3] {
        (bbox[1], bbox[3])
    } else {
        (bbox[3], bbox[1])
    };
    [sx(x0), sy(y0), sx(x1), sy(y1)]
}

/// Converts the JSON annotation list. Records without an embedded size fall
/// back to `default_size`; with neither, conversion fails. Triplets sharing a
/// (subject, object) box pair merge into one record with several verbs.
/// Returns the header (with computed train counts) plus one entry per image;
/// image files keep their source names under `images/`.
pub fn convert_hico(
    json: &str,
    cats: &HicoCategories,
    default_size: Option<(usize, usize)>,
) -> Result<(HeaderLine, Vec<EntryLine>)> {
    cats.validate()?;
    let raw: Vec<RawEntry> =
        serde_json::from_str(json).map_err(|e| Error::Config(format!("parse annotations: {e}")))?;
    let obj_index: IndexMap<usize, usize> = cats
        .raw_object_ids
        .iter()
        .enumerate()
        .map(|(i, &raw_id)| (raw_id, i))
        .collect();
    let hoi_index: IndexMap<(usize, usize), usize> = cats
        .hoi
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();

    let mut entries = Vec::with_capacity(raw.len());
    let mut train_counts = vec![0usize; cats.hoi.len()];
    for (rec_no, rec) in raw.iter().enumerate() {
        let ctx = |m: String| Error::Config(format!("record {rec_no} ({}): {m}", rec.file_name));
        let (w, h) = match (rec.img_w, rec.img_h, default_size) {
            (Some(w), Some(h), _) => (w, h),
            (_, _, Some(d)) => d,
            _ => {
                return Err(ctx(
                    "no image size in the record and no default size given".into(),
                ))
            }
        };
        if w == 0 || h == 0 {
            return Err(ctx(format!("zero image size {w}x{h}")));
        }
        let id = rec
            .file_name
            .rsplit_once('.')
            .map(|(stem, _)| stem)
            .unwrap_or(&rec.file_name)
            .to_string();

        let mut merged: IndexMap<(usize, usize), Vec<usize>> = IndexMap::new();
        for (t, tri) in rec.hoi_annotation.iter().enumerate() {
            if tri.subject_id >= rec.annotations.len() || tri.object_id >= rec.annotations.len() {
                return Err(ctx(format!(
                    "triplet {t} references box {} / {} but only {} boxes exist",
                    tri.subject_id,
                    tri.object_id,
                    rec.annotations.len()
                )));
            }
            if tri.category_id == 0 || tri.category_id > cats.verbs.len() {
                return Err(ctx(format!(
                    "triplet {t}: verb id {} out of range 1..={}",
                    tri.category_id,
                    cats.verbs.len()
                )));
            }
            merged
                .entry((tri.subject_id, tri.object_id))
                .or_default()
                .push(tri.category_id - 1);
        }

        let mut pairs = Vec::with_capacity(merged.len());
        for ((subject_id, object_id), mut verbs) in merged {
            let raw_obj = rec.annotations[object_id].category_id;
            let Some(&object_class) = obj_index.get(&raw_obj) else {
                return Err(ctx(format!(
                    "box {object_id} has unknown object category id {raw_obj}"
                )));
            };
            verbs.dedup();
            for &v in &verbs {
                let Some(&hoi_id) = hoi_index.get(&(object_class, v)) else {
                    return Err(ctx(format!(
                        "(object {object_class}, verb {v}) is not in the interaction table"
                    )));
                };
                train_counts[hoi_id] += 1;
            }
            pairs.push(PairLine {
                human: norm_box(rec.annotations[subject_id].bbox, w, h),
                object: norm_box(rec.annotations[object_id].bbox, w, h),
                object_class,
                verbs,
            });
        }
        entries.push(EntryLine {
            id: id.clone(),
            file: format!("images/{}", rec.file_name),
            width: w,
            height: h,
            pairs,
        });
    }

    let header = HeaderLine {
        kind: "hoi-dataset".into(),
        objects: cats.objects.clone(),
        verbs: cats.verbs.clone(),
        hoi: cats.hoi.clone(),
        train_counts,
    };
    Ok((header, entries))
}
