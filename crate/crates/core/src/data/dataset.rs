//! On-disk dataset layout and loader.
//!
//! A dataset root holds `dataset.jsonl` plus an `images/` directory. The
//! first line of the JSONL file is a header naming the object and verb
//! categories, the interaction table (object id, verb id per interaction
//! class) and per-class training counts. Every following line describes one
//! image: id, relative file path, pixel size and the annotated pairs with
//! boxes in normalized corner form.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CategoryMeta;
use crate::geometry::Box;
use crate::matching::{GroundTruthPair, GroundTruthSet};
use crate::model::encoder::PixelImage;

pub const INDEX_FILE: &str = "dataset.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderLine {
    pub kind: String,
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
    /// Interaction table: entry i is (object id, verb id) of class i.
    pub hoi: Vec<(usize, usize)>,
    pub train_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLine {
    /// Normalized corners (x0, y0, x1, y1).
    pub human: [f64; 4],
    pub object: [f64; 4],
    pub object_class: usize,
    pub verbs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryLine {
    pub id: String,
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub pairs: Vec<PairLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: String,
    /// Path relative to the dataset root.
    pub file: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub images: Vec<ImageInfo>,
    pub gts: IndexMap<String, GroundTruthSet>,
    pub meta: CategoryMeta,
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: &str) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }
}

fn line_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_box(path: &Path, line: usize, label: &str, c: [f64; 4]) -> Result<Box> {
    let [x0, y0, x1, y1] = c;
    for v in c {
        if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(line_err(
                path,
                line,
                format!("{label} box coordinate {v} outside [0, 1]"),
            ));
        }
    }
    if x1 < x0 || y1 < y0 {
        return Err(line_err(
            path,
            line,
            format!("{label} box corners out of order ({x0}, {y0}, {x1}, {y1})"),
        ));
    }
    Box::from_corners(x0, y0, x1, y1)
        .map_err(|e| line_err(path, line, format!("{label} box: {e}")))
}

/// Reads `dataset.jsonl` under `root`, validates every record and resolves
/// (object, verb) annotations to interaction class ids. Errors carry the file
/// and 1-based line number.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    let path = root.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut lines = text.lines().enumerate();

    let (_, header_text) = lines
        .next()
        .ok_or_else(|| line_err(&path, 1, "empty dataset file"))?;
    let header: HeaderLine = serde_json::from_str(header_text)
        .map_err(|e| line_err(&path, 1, format!("bad header: {e}")))?;
    if header.kind != "hoi-dataset" {
        return Err(line_err(
            &path,
            1,
            format!("unknown dataset kind {:?}", header.kind),
        ));
    }
    if header.train_counts.len() != header.hoi.len() {
        return Err(line_err(
            &path,
            1,
            format!(
                "train_counts has {} entries but the interaction table has {}",
                header.train_counts.len(),
                header.hoi.len()
            ),
        ));
    }
    let n_obj = header.objects.len();
    let n_verb = header.verbs.len();
    let mut hoi_of: IndexMap<(usize, usize), usize> = IndexMap::new();
    for (i, &(o, v)) in header.hoi.iter().enumerate() {
        if o >= n_obj {
            return Err(line_err(
                &path,
                1,
                format!("interaction {i}: object id {o} out of range 0..{n_obj}"),
            ));
        }
        if v >= n_verb {
            return Err(line_err(
                &path,
                1,
                format!("interaction {i}: verb id {v} out of range 0..{n_verb}"),
            ));
        }
        if hoi_of.insert((o, v), i).is_some() {
            return Err(line_err(
                &path,
                1,
                format!("interaction table lists ({o}, {v}) twice"),
            ));
        }
    }
    let meta = CategoryMeta {
        pairs: header.hoi.clone(),
        train_counts: header.train_counts.clone(),
    };
    meta.validate(n_obj, n_verb)
        .map_err(|e| line_err(&path, 1, e.to_string()))?;

    let mut images = Vec::new();
    let mut gts: IndexMap<String, GroundTruthSet> = IndexMap::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: EntryLine = serde_json::from_str(raw)
            .map_err(|e| line_err(&path, line_no, format!("bad image record: {e}")))?;
        if gts.contains_key(&entry.id) {
            return Err(line_err(
                &path,
                line_no,
                format!("duplicate image id {:?}", entry.id),
            ));
        }
        if entry.width == 0 || entry.height == 0 {
            return Err(line_err(
                &path,
                line_no,
                format!("image {:?} has zero size", entry.id),
            ));
        }
        let file = root.join(&entry.file);
        if !file.is_file() {
            return Err(line_err(
                &path,
                line_no,
                format!("image file {} does not exist", file.display()),
            ));
        }
        let mut pairs = Vec::with_capacity(entry.pairs.len());
        for (p_idx, p) in entry.pairs.iter().enumerate() {
            let human = parse_box(&path, line_no, "human", p.human)?;
            let object = parse_box(&path, line_no, "object", p.object)?;
            if p.object_class >= n_obj {
                return Err(line_err(
                    &path,
                    line_no,
                    format!(
                        "pair {p_idx}: object class {} out of range 0..{n_obj}",
                        p.object_class
                    ),
                ));
            }
            if p.verbs.is_empty() {
                return Err(line_err(
                    &path,
                    line_no,
                    format!("pair {p_idx}: no verbs annotated"),
                ));
            }
            let mut hoi = Vec::with_capacity(p.verbs.len());
            for &v in &p.verbs {
                if v >= n_verb {
                    return Err(line_err(
                        &path,
                        line_no,
                        format!("pair {p_idx}: verb id {v} out of range 0..{n_verb}"),
                    ));
                }
                let Some(&h) = hoi_of.get(&(p.object_class, v)) else {
                    return Err(line_err(
                        &path,
                        line_no,
                        format!(
                            "pair {p_idx}: combination (object {}, verb {v}) is not in the interaction table",
                            p.object_class
                        ),
                    ));
                };
                hoi.push(h);
            }
            pairs.push(GroundTruthPair {
                human,
                object,
                object_class: p.object_class,
                hoi,
            });
        }
        images.push(ImageInfo {
            id: entry.id.clone(),
            file: PathBuf::from(&entry.file),
            width: entry.width,
            height: entry.height,
        });
        gts.insert(entry.id, GroundTruthSet { pairs });
    }

    Ok(DatasetIndex {
        root: root.to_path_buf(),
        images,
        gts,
        meta,
        objects: header.objects,
        verbs: header.verbs,
    })
}

/// Writes a dataset index file. The caller is responsible for the images.
pub fn write_index(root: &Path, header: &HeaderLine, entries: &[EntryLine]) -> Result<()> {
    let path = root.join(INDEX_FILE);
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(header)
            .map_err(|e| Error::Config(format!("serialize dataset header: {e}")))?,
    );
    out.push('\n');
    for e in entries {
        out.push_str(
            &serde_json::to_string(e)
                .map_err(|e| Error::Config(format!("serialize dataset entry: {e}")))?,
        );
        out.push('\n');
    }
    std::fs::write(&path, out).map_err(|e| Error::Io { path, source: e })
}

/// Loads one image as float RGB in [0, 1] and checks it matches the size
/// recorded in the index.
pub fn load_image(root: &Path, info: &ImageInfo) -> Result<PixelImage> {
    let path = root.join(&info.file);
    let img = image::open(&path)
        .map_err(|e| Error::Config(format!("read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w != info.width || h != info.height {
        return Err(Error::Config(format!(
            "image {} is {w}x{h} but the index says {}x{}",
            path.display(),
            info.width,
            info.height
        )));
    }
    let mut px = PixelImage::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            px.set(y, x, [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]);
        }
    }
    Ok(px)
}

/// Saves float RGB pixels as an 8-bit PNG.
pub fn save_image(path: &Path, img: &PixelImage) -> Result<()> {
    let mut out = image::RgbImage::new(img.w as u32, img.h as u32);
    for y in 0..img.h {
        for x in 0..img.w {
            let rgb = img.get(y, x);
            let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to8(rgb[0]), to8(rgb[1]), to8(rgb[2])]),
            );
        }
    }
    out.save(path)
        .map_err(|e| Error::Config(format!("write image {}: {e}", path.display())))
}
