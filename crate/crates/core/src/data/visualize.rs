//! Attention visualization: three heatmap panels for the query with the
//! strongest interaction score, overlaid on the input image together with
//! the predicted boxes.
//!
//! Panel order is fixed: 1 instance decoder, 2 context aggregator,
//! 3 context extractor. Aggregator attention lives over branch streams, not
//! pixels, so panel 2 composes the stream weights with that branch's own
//! memory attention to land back in the spatial grid.

use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::data::checkpoint::load_checkpoint;
use crate::data::config::RunConfig;
use crate::data::dataset::{load_dataset, load_image, save_image};
use crate::data::train::build_model;
use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::matching::PairSnapshot;
use crate::model::encoder::PixelImage;
use crate::model::full::{snapshot, RunMode};
use crate::model::Session;

const HUMAN_BOX_COLOR: [f64; 3] = [1.0, 0.1, 0.1];
const OBJECT_BOX_COLOR: [f64; 3] = [0.15, 0.4, 1.0];
const CONTEXT_BOX_COLOR: [f64; 3] = [0.1, 0.9, 0.2];

/// Row `k` of a `[rows, hp*wp]` attention map as a spatial grid.
fn attn_row(weights: &Tensor, row: usize, hp: usize, wp: usize) -> Tensor {
    assert_eq!(weights.cols, hp * wp, "attention keys do not form the grid");
    Tensor::from_fn(hp, wp, |y, x| weights.get(row, y * wp + x))
}

fn mean_rows(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.rows, a.cols, |r, c| (a.get(r, c) + b.get(r, c)) / 2.0)
}

/// Weighted sum of the rows of `spatial` (`[rows, hp*wp]`) by `weights`
/// (`[rows]`), reshaped to the grid.
fn compose(weights: &[f64], spatial: &Tensor, hp: usize, wp: usize) -> Tensor {
    assert_eq!(weights.len(), spatial.rows);
    Tensor::from_fn(hp, wp, |y, x| {
        weights
            .iter()
            .enumerate()
            .map(|(r, &w)| w * spatial.get(r, y * wp + x))
            .sum()
    })
}

fn normalize01(t: &Tensor) -> Tensor {
    let lo = t.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        return Tensor::zeros(t.rows, t.cols);
    }
    Tensor::from_fn(t.rows, t.cols, |r, c| (t.get(r, c) - lo) / (hi - lo))
}

/// Grayscale base blended with a red-hot colormap, nearest-neighbor
/// upsampled from the token grid.
fn overlay(img: &PixelImage, heat: &Tensor) -> PixelImage {
    let mut out = PixelImage::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let p = img.get(y, x);
            let gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            let hy = (y * heat.rows / img.h).min(heat.rows - 1);
            let hx = (x * heat.cols / img.w).min(heat.cols - 1);
            let h = heat.get(hy, hx);
            let hot = [h, h * h, 0.15 * h];
            out.set(y, x, [
                0.5 * gray + 0.5 * hot[0],
                0.5 * gray + 0.5 * hot[1],
                0.5 * gray + 0.5 * hot[2],
            ]);
        }
    }
    out
}

fn draw_box(img: &mut PixelImage, b: &Box, color: [f64; 3]) {
    let (x0, y0, x1, y1) = b.corners();
    let px = |v: f64, max: usize| ((v * max as f64).round() as i64).clamp(0, max as i64 - 1) as usize;
    let (x0, x1) = (px(x0, img.w), px(x1, img.w));
    let (y0, y1) = (px(y0, img.h), px(y1, img.h));
    for x in x0..=x1 {
        img.set(y0, x, color);
        img.set(y1, x, color);
    }
    for y in y0..=y1 {
        img.set(y, x0, color);
        img.set(y, x1, color);
    }
}

/// Query with the highest single interaction score.
fn best_query(snaps: &[PairSnapshot]) -> usize {
    let peak = |s: &PairSnapshot| s.hoi_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..snaps.len())
        .max_by(|&a, &b| peak(&snaps[a]).partial_cmp(&peak(&snaps[b])).unwrap())
        .unwrap_or(0)
}

/// Renders the three panels for `image_id` and returns their paths in panel
/// order. The checkpoint carries its own config; the dataset only supplies
/// the image and the category space.
pub fn visualize(
    checkpoint: &Path,
    data_root: &Path,
    image_id: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = RunConfig::from_toml(&ckpt.config_toml)?;
    let ds = load_dataset(data_root)?;
    let info = ds.image(image_id).ok_or_else(|| {
        Error::Config(format!(
            "image id {image_id:?} is not in the dataset at {}",
            data_root.display()
        ))
    })?;
    let img = load_image(&ds.root, info)?;
    let (mut store, model) = build_model(&cfg, &ds.objects, &ds.verbs, &ds.meta)?;
    ckpt.restore_params(&mut store)?;

    let mut s = Session::new(&store);
    let out = model.forward(&mut s, &img, &cfg.branches, 1.0, RunMode::Eval)?;
    let snaps = snapshot(&s, &out);
    let k = best_query(&snaps);
    let (hp, wp) = (out.mem.hp, out.mem.wp);

    // Panel 1: instance decoder cross-attention, mean of the pair rows.
    let ins_last = &out.instance.traces.last().expect("decoder has layers").weights;
    let ins_heat = mean_rows(
        &attn_row(ins_last, 2 * k, hp, wp),
        &attn_row(ins_last, 2 * k + 1, hp, wp),
    );

    // Panel 3: context extractor cross-attention for the same query.
    let ctx_last = out
        .context
        .as_ref()
        .map(|c| &c.traces.last().expect("decoder has layers").weights);
    let ctx_heat = match ctx_last {
        Some(w) => attn_row(w, k, hp, wp),
        None => Tensor::zeros(hp, wp),
    };

    // Panel 2: aggregator stream weights pushed through that stream's own
    // spatial attention. The context stream is the interesting one; without
    // a context branch the instance stream is shown instead.
    let agg_heat = match ctx_last {
        Some(ctx_w) => {
            let stream = out.aggregated.traces[1]
                .last()
                .expect("aggregator has layers");
            compose(stream.weights.row_slice(k), ctx_w, hp, wp)
        }
        None => {
            let stream = out.aggregated.traces[0]
                .last()
                .expect("aggregator has layers");
            compose(stream.weights.row_slice(k), ins_last, hp, wp)
        }
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let snap = &snaps[k];
    let b_c = out.context.as_ref().map(|c| {
        let t = s.tape.value(c.b_c);
        Box::new(t.get(k, 0), t.get(k, 1), t.get(k, 2), t.get(k, 3))
            .expect("context box head emits finite boxes")
    });

    let panels = [
        ("panel1_instance", &ins_heat, false),
        ("panel2_aggregator", &agg_heat, false),
        ("panel3_context", &ctx_heat, true),
    ];
    let mut paths = Vec::new();
    for (name, heat, with_context_box) in panels {
        let mut panel = overlay(&img, &normalize01(heat));
        draw_box(&mut panel, &snap.human, HUMAN_BOX_COLOR);
        draw_box(&mut panel, &snap.object, OBJECT_BOX_COLOR);
        if with_context_box {
            if let Some(b) = &b_c {
                draw_box(&mut panel, b, CONTEXT_BOX_COLOR);
            }
        }
        let path = out_dir.join(format!("{image_id}_{name}.png"));
        save_image(&path, &panel)?;
        paths.push(path);
    }
    Ok(paths)
}
