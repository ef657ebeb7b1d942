//! Metrics-stream summarizer: a JSON digest plus simple PNG curve plots.

use std::path::{Path, PathBuf};

use anyhow::Context;
use hoi_core::data::{read_metrics, MetricRecord};

pub struct ReportOutput {
    pub summary_path: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn series(records: &[MetricRecord], kind: &str, key: &str) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.kind == kind)
        .filter_map(|r| r.values.get(key).map(|&v| (r.step as f64, v)))
        .collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Polyline plot on a white canvas with a thin frame. X is the step axis.
fn plot_series(points: &[(f64, f64)], path: &Path) -> anyhow::Result<()> {
    const W: u32 = 640;
    const H: u32 = 320;
    const MARGIN: u32 = 20;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    for x in MARGIN..W - MARGIN {
        img.put_pixel(x, MARGIN, image::Rgb([180, 180, 180]));
        img.put_pixel(x, H - MARGIN, image::Rgb([180, 180, 180]));
    }
    for y in MARGIN..H - MARGIN {
        img.put_pixel(MARGIN, y, image::Rgb([180, 180, 180]));
        img.put_pixel(W - MARGIN, y, image::Rgb([180, 180, 180]));
    }
    let (x_lo, x_hi) = min_max(points.iter().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (y_lo, y_hi) = min_max(points.iter().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let x_span = (x_hi - x_lo).max(1e-12);
    let y_span = (y_hi - y_lo).max(1e-12);
    let to_px = |(x, y): (f64, f64)| {
        let px = MARGIN as f64 + (x - x_lo) / x_span * (W - 2 * MARGIN) as f64;
        let py = (H - MARGIN) as f64 - (y - y_lo) / y_span * (H - 2 * MARGIN) as f64;
        (px as i64, py as i64)
    };
    let mut draw = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, image::Rgb([30, 80, 220]));
        }
    };
    for pair in points.windows(2) {
        let (x0, y0) = to_px(pair[0]);
        let (x1, y1) = to_px(pair[1]);
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            draw(
                x0 + ((x1 - x0) as f64 * t).round() as i64,
                y0 + ((y1 - y0) as f64 * t).round() as i64,
            );
        }
    }
    if points.len() == 1 {
        let (x, y) = to_px(points[0]);
        draw(x, y);
    }
    img.save(path)
        .with_context(|| format!("write plot {}", path.display()))?;
    Ok(())
}

fn digest(points: &[(f64, f64)]) -> serde_json::Value {
    match (points.first(), points.last(), min_max(points.iter().map(|p| p.1))) {
        (Some(first), Some(last), Some((lo, hi))) => serde_json::json!({
            "points": points.len(),
            "first": first.1,
            "final": last.1,
            "min": lo,
            "max": hi,
        }),
        _ => serde_json::json!(null),
    }
}

/// Reads a metrics stream and writes `report.json` plus one plot per tracked
/// curve into `out`.
pub fn render_report(metrics: &Path, out: &Path) -> anyhow::Result<ReportOutput> {
    let records = read_metrics(metrics)?;
    anyhow::ensure!(
        !records.is_empty(),
        "metrics stream {} holds no records",
        metrics.display()
    );
    std::fs::create_dir_all(out).with_context(|| format!("create {}", out.display()))?;

    let loss = series(&records, "train", "loss");
    let map = series(&records, "eval", "map");
    let verb = series(&records, "eval", "verb_acc");

    let mut plots = Vec::new();
    for (name, points) in [
        ("loss_curve.png", &loss),
        ("map_curve.png", &map),
        ("verb_acc_curve.png", &verb),
    ] {
        if !points.is_empty() {
            let path = out.join(name);
            plot_series(points, &path)?;
            plots.push(path);
        }
    }

    let summary = serde_json::json!({
        "records": records.len(),
        "train_steps": records.iter().filter(|r| r.kind == "train").count(),
        "loss": digest(&loss),
        "map": digest(&map),
        "verb_acc": digest(&verb),
    });
    let summary_path = out.join("report.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("write {}", summary_path.display()))?;
    Ok(ReportOutput {
        summary_path,
        plots,
    })
}
