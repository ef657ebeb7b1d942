//! Synthetic scene generator.
//!
//! Scenes are flat-color marker images: a fixed red human marker, a colored
//! object marker and four equally sized texture patches painted into the
//! background. The patch nearest the pair carries the cue texture; the
//! three farther patches carry the remaining textures as distractors. On the `context` task the
//! verb is a deterministic function of the cue texture and carries no signal
//! in the foreground markers, so an interaction head can only resolve verbs
//! by reading the background immediately around the pair: a random patch,
//! or a pooled read over all patches, sees every texture class equally
//! often. All
//! four textures also share the same tone histogram, so no global brightness
//! statistic separates them. On the `foreground` task the verb follows the
//! object marker instead and the cue texture is random noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{
    load_dataset, save_image, write_index, DatasetIndex, EntryLine, HeaderLine, PairLine,
};
use crate::error::{Error, Result};
use crate::model::encoder::PixelImage;
use crate::rng::{self, streams};

pub const OBJECT_COLORS: [[f64; 3]; 8] = [
    [0.15, 0.35, 0.95],
    [0.10, 0.80, 0.20],
    [0.95, 0.85, 0.10],
    [0.90, 0.20, 0.90],
    [0.10, 0.90, 0.90],
    [0.95, 0.55, 0.10],
    [0.50, 0.20, 0.80],
    [0.98, 0.98, 0.98],
];
pub const OBJECT_NAMES: [&str; 8] = [
    "blue", "green", "yellow", "magenta", "cyan", "orange", "purple", "white",
];
pub const VERB_NAMES: [&str; 4] = ["stripes_h", "stripes_v", "checker", "diagonal"];
pub const HUMAN_COLOR: [f64; 3] = [0.90, 0.15, 0.15];
pub const OCCLUDER_COLOR: [f64; 3] = [0.45, 0.45, 0.45];
pub const BACKGROUND_TONE: f64 = 0.5;
pub const SUBSET_FILE: &str = "ambiguous.txt";
pub const SPEC_FILE: &str = "generator.toml";

/// Which part of the scene decides the verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    #[default]
    Context,
    Foreground,
}

/// Relative weights of the difficulty variants. Assignment is stratified, so
/// the realized counts match the weights exactly up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifficultyMix {
    pub clear: f64,
    pub occluded: f64,
    pub blurred: f64,
    pub tiny: f64,
}

impl Default for DifficultyMix {
    fn default() -> Self {
        DifficultyMix {
            clear: 1.0,
            occluded: 0.0,
            blurred: 0.0,
            tiny: 0.0,
        }
    }
}

impl DifficultyMix {
    fn weights(&self) -> [f64; 4] {
        [self.clear, self.occluded, self.blurred, self.tiny]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Difficulty {
    Clear,
    Occluded,
    Blurred,
    Tiny,
}

const DIFFICULTIES: [Difficulty; 4] = [
    Difficulty::Clear,
    Difficulty::Occluded,
    Difficulty::Blurred,
    Difficulty::Tiny,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub scenes: usize,
    pub image_size: usize,
    pub task: SynthTask,
    pub mix: DifficultyMix,
    pub n_obj: usize,
    pub n_verb: usize,
    /// Brightness gap between the two texture tones; lower means the verb
    /// cue is more subtle.
    pub texture_contrast: f64,
    /// Skews the object marginal so the tail classes fall under the rare
    /// threshold at typical scene counts.
    pub skew_objects: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            scenes: 64,
            image_size: 64,
            task: SynthTask::Context,
            mix: DifficultyMix::default(),
            n_obj: 8,
            n_verb: 4,
            texture_contrast: 0.35,
            skew_objects: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        if self.n_obj == 0 || self.n_obj > OBJECT_COLORS.len() {
            return Err(Error::Config(format!(
                "n_obj must lie in 1..={}, got {}",
                OBJECT_COLORS.len(),
                self.n_obj
            )));
        }
        if self.n_verb == 0 || self.n_verb > VERB_NAMES.len() {
            return Err(Error::Config(format!(
                "n_verb must lie in 1..={}, got {}",
                VERB_NAMES.len(),
                self.n_verb
            )));
        }
        if !(self.texture_contrast > 0.0 && self.texture_contrast <= 1.0) {
            return Err(Error::Config(format!(
                "texture_contrast must lie in (0, 1], got {}",
                self.texture_contrast
            )));
        }
        let w = self.mix.weights();
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "difficulty mix weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let spec: SynthSpec = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("parse {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Pixel-space rectangle, inclusive origin, exclusive end.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Rect {
    fn corners_norm(&self, size: usize) -> [f64; 4] {
        let s = size as f64;
        [
            self.x as f64 / s,
            self.y as f64 / s,
            (self.x + self.w) as f64 / s,
            (self.y + self.h) as f64 / s,
        ]
    }
}

fn fill_rect(img: &mut PixelImage, r: Rect, color: [f64; 3]) {
    for y in r.y..(r.y + r.h).min(img.h) {
        for x in r.x..(r.x + r.w).min(img.w) {
            img.set(y, x, color);
        }
    }
}

/// Central sub-rectangle used as the occluder: a 10% inset per side keeps at
/// least 64% of the marker area covered for any marker of 3px or more.
fn occluder_rect(r: Rect) -> Rect {
    let ix = (r.w as f64 * 0.1).floor() as usize;
    let iy = (r.h as f64 * 0.1).floor() as usize;
    Rect {
        x: r.x + ix,
        y: r.y + iy,
        w: r.w - 2 * ix,
        h: r.h - 2 * iy,
    }
}

/// Texture patterns repeat every `TILE` pixels in both directions, and
/// patches snap to the `TILE` lattice, so every tile of a class is
/// pixel-identical no matter where it lands. Placement stays random, which
/// keeps a pure position lookup useless for the verb.
pub const TILE: usize = 8;

/// Every scene carries one patch per texture class.
pub const PATCHES_PER_SCENE: usize = VERB_NAMES.len();

/// Paints the texture pattern inside `r`. Pattern coordinates are local to
/// the patch so every patch of a class looks the same regardless of where it
/// lands. The two tones are symmetric around the background, and all four
/// patterns use them half-and-half, so the patch mean and histogram carry no
/// class information.
fn paint_texture(img: &mut PixelImage, r: Rect, texture: usize, contrast: f64) {
    let hi = (BACKGROUND_TONE + contrast / 2.0).min(1.0);
    let lo = (BACKGROUND_TONE - contrast / 2.0).max(0.0);
    let band = TILE / 4;
    for y in r.y..(r.y + r.h).min(img.h) {
        for x in r.x..(r.x + r.w).min(img.w) {
            let (ly, lx) = (y - r.y, x - r.x);
            let on = match texture {
                0 => (ly / band) % 2 == 0,
                1 => (lx / band) % 2 == 0,
                2 => ((lx / (2 * band)) + (ly / (2 * band))) % 2 == 0,
                _ => ((lx + ly) / band) % 2 == 0,
            };
            let tone = if on { hi } else { lo };
            img.set(y, x, [tone, tone, tone]);
        }
    }
}

fn overlaps(a: Rect, b: Rect, margin: usize) -> bool {
    a.x < b.x + b.w + margin
        && b.x < a.x + a.w + margin
        && a.y < b.y + b.h + margin
        && b.y < a.y + a.h + margin
}

/// Center of the union box over both markers, in pixels.
fn pair_center(human: Rect, object: Rect) -> (f64, f64) {
    let x0 = human.x.min(object.x);
    let y0 = human.y.min(object.y);
    let x1 = (human.x + human.w).max(object.x + object.w);
    let y1 = (human.y + human.h).max(object.y + object.h);
    ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0)
}

/// Patch side in tiles: 2×2 tiles on canvases with at least 8 tile cells,
/// one tile otherwise.
fn patch_span(cells: usize) -> usize {
    if cells >= 8 {
        2
    } else {
        1
    }
}

/// Places one equally sized texture patch per texture class on the tile
/// lattice. The cue patch lands in a ring around the pair and the distractor
/// patches land farther out, all clear of the markers and of each other by a
/// margin, so "which texture sits next to the pair" is the only signal that
/// survives pooling over the patches. Distance bands degrade gracefully on
/// crowded or tiny canvases: the cue falls back to the free block closest to
/// the ring and distractors to the farthest remaining blocks.
fn place_patches(
    rng: &mut ChaCha8Rng,
    size: usize,
    avoid: [Rect; 2],
    cue_texture: usize,
) -> Vec<(Rect, usize)> {
    let cells = size / TILE;
    let span = patch_span(cells);
    let side = span * TILE;
    let margin = (TILE / 4).max(2);
    let (px, py) = pair_center(avoid[0], avoid[1]);
    let near_lo = size as f64 / 8.0;
    let near_hi = size as f64 / 4.0;
    let far_lo = size as f64 / 1.8;
    let gap = size as f64 / 6.0;

    struct Block {
        rect: Rect,
        dist: f64,
    }
    let mut free: Vec<Block> = Vec::new();
    for cy in 0..=cells.saturating_sub(span) {
        for cx in 0..=cells.saturating_sub(span) {
            let rect = Rect {
                x: cx * TILE,
                y: cy * TILE,
                w: side,
                h: side,
            };
            if avoid.iter().any(|a| overlaps(rect, *a, margin)) {
                continue;
            }
            let mx = rect.x as f64 + side as f64 / 2.0;
            let my = rect.y as f64 + side as f64 / 2.0;
            let dist = ((mx - px).powi(2) + (my - py).powi(2)).sqrt();
            free.push(Block { rect, dist });
        }
    }

    // Cue first: a random block inside the near ring, or the free block
    // closest to the ring when the markers crowd it out.
    let band: Vec<usize> = (0..free.len())
        .filter(|&i| free[i].dist >= near_lo && free[i].dist <= near_hi)
        .collect();
    let cue_idx = if band.is_empty() {
        let mid = (near_lo + near_hi) / 2.0;
        (0..free.len()).min_by(|&a, &b| {
            (free[a].dist - mid)
                .abs()
                .partial_cmp(&(free[b].dist - mid).abs())
                .unwrap()
        })
    } else {
        Some(band[rng.random_range(0..band.len())])
    };
    let (cue_rect, cue_dist) = match cue_idx {
        Some(i) => {
            let b = free.remove(i);
            (b.rect, b.dist)
        }
        // Nothing is free at all; tuck the cue into a corner.
        None => (Rect { x: 0, y: 0, w: side, h: side }, 0.0),
    };
    free.retain(|b| !overlaps(b.rect, cue_rect, margin));

    // Distractors sit both outside the far floor and a clear gap beyond the
    // cue, so the cue is strictly the nearest patch to the pair. If the canvas
    // cannot honour the floor the gap alone still preserves that ordering.
    let mut chosen = vec![cue_rect];
    for _ in 1..PATCHES_PER_SCENE {
        let strict: Vec<usize> = (0..free.len())
            .filter(|&i| free[i].dist >= far_lo.max(cue_dist + gap))
            .collect();
        let idx = if !strict.is_empty() {
            Some(strict[rng.random_range(0..strict.len())])
        } else {
            (0..free.len())
                .filter(|&i| free[i].dist > cue_dist + TILE as f64)
                .max_by(|&a, &b| free[a].dist.partial_cmp(&free[b].dist).unwrap())
        };
        let rect = match idx {
            Some(i) => free.remove(i).rect,
            None => Rect {
                x: size - side,
                y: size - side,
                w: side,
                h: side,
            },
        };
        free.retain(|b| !overlaps(b.rect, rect, margin));
        chosen.push(rect);
    }

    let mut others: Vec<usize> = (0..PATCHES_PER_SCENE).filter(|&t| t != cue_texture).collect();
    others.shuffle(rng);
    let mut out = vec![(chosen[0], cue_texture)];
    for (rect, &t) in chosen[1..].iter().zip(&others) {
        out.push((*rect, t));
    }
    out
}

fn box_blur(img: &PixelImage) -> PixelImage {
    let mut out = PixelImage::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = y as i64 + dy;
                    let xx = x as i64 + dx;
                    if yy >= 0 && yy < img.h as i64 && xx >= 0 && xx < img.w as i64 {
                        let p = img.get(yy as usize, xx as usize);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                        n += 1.0;
                    }
                }
            }
            out.set(y, x, [acc[0] / n, acc[1] / n, acc[2] / n]);
        }
    }
    out
}

fn random_rect(rng: &mut ChaCha8Rng, size: usize, lo: usize, hi: usize) -> Rect {
    let w = rng.random_range(lo..=hi);
    let h = rng.random_range(lo..=hi);
    let x = rng.random_range(1..size - w - 1);
    let y = rng.random_range(1..size - h - 1);
    Rect { x, y, w, h }
}

/// Stratified label assignment: exact counts from the weights, order shuffled
/// by the generator stream.
fn assign<T: Copy>(labels: &[T], weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (w / total * n as f64).floor() as usize)
        .collect();
    let mut remainder = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = weights[a] / total * n as f64;
        let fb = weights[b] / total * n as f64;
        (fb - fb.floor())
            .partial_cmp(&(fa - fa.floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(weights.len() * 2) {
        if remainder == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            remainder -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(labels[i], c));
    }
    out.shuffle(rng);
    out
}

/// Generates `spec.scenes` images plus the index, the ambiguous-subset file
/// and a copy of the generator spec under `out`, then reloads the result
/// through the ordinary dataset loader.
pub fn generate_synthetic(spec: &SynthSpec, out: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::Io {
        path: images_dir.clone(),
        source: e,
    })?;
    let mut rng = rng::stream(spec.seed, streams::SYNTH);
    let size = spec.image_size;

    let verb_weights = vec![1.0; spec.n_verb];
    let verbs: Vec<usize> = (0..spec.n_verb).collect();
    let verb_of_scene = assign(&verbs, &verb_weights, spec.scenes, &mut rng);

    let object_weights: Vec<f64> = (0..spec.n_obj)
        .map(|o| if spec.skew_objects { 0.5f64.powi(o as i32) } else { 1.0 })
        .collect();
    let objects: Vec<usize> = (0..spec.n_obj).collect();
    let object_of_scene = assign(&objects, &object_weights, spec.scenes, &mut rng);

    let difficulty_of_scene = assign(
        &DIFFICULTIES,
        &spec.mix.weights(),
        spec.scenes,
        &mut rng,
    );

    let mut entries = Vec::with_capacity(spec.scenes);
    let mut ambiguous = Vec::new();
    let mut train_counts = vec![0usize; spec.n_obj * spec.n_verb];
    for i in 0..spec.scenes {
        let id = format!("scene_{i:04}");
        let object_class = object_of_scene[i];
        let difficulty = difficulty_of_scene[i];
        let verb = match spec.task {
            SynthTask::Context => verb_of_scene[i],
            SynthTask::Foreground => object_class % spec.n_verb,
        };
        let texture = match spec.task {
            SynthTask::Context => verb,
            SynthTask::Foreground => rng.random_range(0..spec.n_verb),
        };

        let (lo, hi) = match difficulty {
            Difficulty::Tiny => (3, 5),
            _ => (10, 18),
        };
        let hi = hi.min(size * 2 / 5).max(3);
        let lo = lo.min(hi).max(3);
        let o_hi = hi.min(14);
        let o_lo = lo.min(o_hi);
        let human = random_rect(&mut rng, size, lo, hi);
        let object = random_rect(&mut rng, size, o_lo, o_hi);
        let patches = place_patches(&mut rng, size, [human, object], texture);

        let mut img = PixelImage::new(size, size);
        fill_rect(
            &mut img,
            Rect { x: 0, y: 0, w: size, h: size },
            [BACKGROUND_TONE; 3],
        );
        for &(r, t) in &patches {
            paint_texture(&mut img, r, t, spec.texture_contrast);
        }
        fill_rect(&mut img, human, HUMAN_COLOR);
        fill_rect(&mut img, object, OBJECT_COLORS[object_class]);
        match difficulty {
            Difficulty::Occluded => fill_rect(&mut img, occluder_rect(human), OCCLUDER_COLOR),
            Difficulty::Blurred => img = box_blur(&img),
            _ => {}
        }

        let file = format!("images/{id}.png");
        save_image(&out.join(&file), &img)?;
        if difficulty != Difficulty::Clear {
            ambiguous.push(id.clone());
        }
        train_counts[object_class * spec.n_verb + verb] += 1;
        entries.push(EntryLine {
            id,
            file,
            width: size,
            height: size,
            pairs: vec![PairLine {
                human: human.corners_norm(size),
                object: object.corners_norm(size),
                object_class,
                verbs: vec![verb],
            }],
        });
    }

    let header = HeaderLine {
        kind: "hoi-dataset".into(),
        objects: OBJECT_NAMES[..spec.n_obj].iter().map(|s| s.to_string()).collect(),
        verbs: VERB_NAMES[..spec.n_verb].iter().map(|s| s.to_string()).collect(),
        hoi: (0..spec.n_obj)
            .flat_map(|o| (0..spec.n_verb).map(move |v| (o, v)))
            .collect(),
        train_counts,
    };
    write_index(out, &header, &entries)?;

    let subset_path = out.join(SUBSET_FILE);
    let mut subset_text = ambiguous.join("\n");
    if !subset_text.is_empty() {
        subset_text.push('\n');
    }
    std::fs::write(&subset_path, subset_text).map_err(|e| Error::Io {
        path: subset_path,
        source: e,
    })?;

    let spec_path = out.join(SPEC_FILE);
    let spec_text =
        toml::to_string(spec).map_err(|e| Error::Config(format!("serialize spec: {e}")))?;
    std::fs::write(&spec_path, spec_text).map_err(|e| Error::Io {
        path: spec_path,
        source: e,
    })?;

    load_dataset(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::load_image;
    use crate::eval::read_subset;

    fn quick_spec(scenes: usize) -> SynthSpec {
        SynthSpec {
            scenes,
            image_size: 32,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            mix: DifficultyMix {
                clear: 0.4,
                occluded: 0.3,
                blurred: 0.2,
                tiny: 0.1,
            },
            ..quick_spec(12)
        };
        let da = generate_synthetic(&spec, a.path()).unwrap();
        let db = generate_synthetic(&spec, b.path()).unwrap();
        assert_eq!(
            std::fs::read(a.path().join("dataset.jsonl")).unwrap(),
            std::fs::read(b.path().join("dataset.jsonl")).unwrap()
        );
        for info in &da.images {
            assert_eq!(
                std::fs::read(a.path().join(&info.file)).unwrap(),
                std::fs::read(b.path().join(&info.file)).unwrap(),
                "pixels differ for {}",
                info.id
            );
        }
        assert_eq!(da.len(), db.len());
    }

    #[test]
    fn different_seeds_differ() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&quick_spec(6), a.path()).unwrap();
        generate_synthetic(&SynthSpec { seed: 8, ..quick_spec(6) }, b.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("dataset.jsonl")).unwrap(),
            std::fs::read(b.path().join("dataset.jsonl")).unwrap()
        );
    }

    #[test]
    fn verb_marginal_is_uniform_over_thousand_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            image_size: 16,
            ..quick_spec(1000)
        };
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        let mut counts = vec![0usize; 4];
        for gts in ds.gts.values() {
            for p in &gts.pairs {
                counts[ds.meta.verb_of(p.hoi[0])] += 1;
            }
        }
        for &c in &counts {
            let frac = c as f64 / 1000.0;
            assert!((frac - 0.25).abs() <= 0.02, "verb marginal {frac}");
        }
    }

    #[test]
    fn half_occluded_mix_lists_exactly_fifty_of_hundred() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            mix: DifficultyMix {
                clear: 0.5,
                occluded: 0.5,
                blurred: 0.0,
                tiny: 0.0,
            },
            image_size: 16,
            ..quick_spec(100)
        };
        generate_synthetic(&spec, dir.path()).unwrap();
        let subset = read_subset(&dir.path().join(SUBSET_FILE)).unwrap();
        assert_eq!(subset.len(), 50);
    }

    #[test]
    fn occluder_covers_at_least_sixty_percent() {
        for w in 3..=30 {
            for h in 3..=30 {
                let r = Rect { x: 0, y: 0, w, h };
                let o = occluder_rect(r);
                let cover = (o.w * o.h) as f64 / (w * h) as f64;
                assert!(cover >= 0.6, "{w}x{h} covered only {cover}");
                assert!(o.x >= r.x && o.y >= r.y);
                assert!(o.x + o.w <= r.x + r.w && o.y + o.h <= r.y + r.h);
            }
        }
    }

    #[test]
    fn occluded_scene_hides_human_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            mix: DifficultyMix {
                clear: 0.0,
                occluded: 1.0,
                blurred: 0.0,
                tiny: 0.0,
            },
            ..quick_spec(4)
        };
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        for info in &ds.images {
            let img = load_image(dir.path(), info).unwrap();
            let gt = &ds.gts[&info.id].pairs[0];
            let (x0, y0) = (
                (gt.human.cx - gt.human.w / 2.0) * 32.0,
                (gt.human.cy - gt.human.h / 2.0) * 32.0,
            );
            let (w, h) = (gt.human.w * 32.0, gt.human.h * 32.0);
            let mut human_px = 0usize;
            let mut occluder_px = 0usize;
            let mut total = 0usize;
            for y in y0 as usize..(y0 + h) as usize {
                for x in x0 as usize..(x0 + w) as usize {
                    let p = img.get(y, x);
                    let close = |a: [f64; 3], b: [f64; 3]| {
                        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 0.02)
                    };
                    if close(p, HUMAN_COLOR) {
                        human_px += 1;
                    }
                    if close(p, OCCLUDER_COLOR) {
                        occluder_px += 1;
                    }
                    total += 1;
                }
            }
            assert!(
                occluder_px as f64 / total as f64 >= 0.6,
                "occluder covers {occluder_px}/{total}"
            );
            assert!(human_px < total);
        }
    }

    /// Recovers the texture tiles from pixels alone: the tile nearest the
    /// pair must carry the verb's pattern and the others must not repeat it.
    #[test]
    fn context_task_texture_follows_verb() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            image_size: 48,
            ..quick_spec(12)
        };
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        let hi = BACKGROUND_TONE + spec.texture_contrast / 2.0;
        let lo = BACKGROUND_TONE - spec.texture_contrast / 2.0;
        for info in &ds.images {
            let img = load_image(dir.path(), info).unwrap();
            let verb = ds.meta.verb_of(ds.gts[&info.id].pairs[0].hoi[0]);

            let cells = spec.image_size / TILE;
            let mut tiles: Vec<(f64, usize)> = Vec::new();
            for cy in 0..cells {
                for cx in 0..cells {
                    let pure = (0..TILE * TILE).all(|i| {
                        let p = img.get(cy * TILE + i / TILE, cx * TILE + i % TILE);
                        let gray = (p[0] - p[1]).abs() < 0.01 && (p[1] - p[2]).abs() < 0.01;
                        gray && ((p[0] - hi).abs() < 0.02 || (p[0] - lo).abs() < 0.02)
                    });
                    if !pure {
                        continue;
                    }
                    let on = |y: usize, x: usize| {
                        img.get(cy * TILE + y, cx * TILE + x)[0] > BACKGROUND_TONE
                    };
                    let rows_const = (0..TILE).all(|y| (1..TILE).all(|x| on(y, x) == on(y, 0)));
                    let cols_const = (0..TILE).all(|x| (1..TILE).all(|y| on(y, x) == on(0, x)));
                    let anti_const =
                        (0..TILE - 1).all(|y| (1..TILE).all(|x| on(y + 1, x - 1) == on(y, x)));
                    let pattern = if rows_const {
                        0
                    } else if cols_const {
                        1
                    } else if anti_const {
                        3
                    } else {
                        2
                    };

                    let gt = &ds.gts[&info.id].pairs[0];
                    let s = spec.image_size as f64;
                    let (hx0, hy0, hx1, hy1) = gt.human.corners();
                    let (ox0, oy0, ox1, oy1) = gt.object.corners();
                    let ux = (hx0.min(ox0) + hx1.max(ox1)) / 2.0 * s;
                    let uy = (hy0.min(oy0) + hy1.max(oy1)) / 2.0 * s;
                    let mx = (cx * TILE) as f64 + TILE as f64 / 2.0;
                    let my = (cy * TILE) as f64 + TILE as f64 / 2.0;
                    let dist = ((mx - ux).powi(2) + (my - uy).powi(2)).sqrt();
                    tiles.push((dist, pattern));
                }
            }
            assert!(tiles.len() >= 2, "{}: found {} tiles", info.id, tiles.len());
            tiles.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            assert_eq!(tiles[0].1, verb, "{}: nearest tile pattern", info.id);
            for (dist, pattern) in &tiles[1..] {
                assert_ne!(*pattern, verb, "{}: distractor at {dist:.1} repeats cue", info.id);
            }
        }
    }

    #[test]
    fn foreground_task_ties_verb_to_object() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            task: SynthTask::Foreground,
            ..quick_spec(10)
        };
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        for gts in ds.gts.values() {
            for p in &gts.pairs {
                assert_eq!(ds.meta.verb_of(p.hoi[0]), p.object_class % 4);
            }
        }
    }

    #[test]
    fn skewed_objects_produce_rare_classes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            skew_objects: true,
            image_size: 16,
            ..quick_spec(120)
        };
        let ds = generate_synthetic(&spec, dir.path()).unwrap();
        let rare = (0..ds.meta.n_hoi()).filter(|&h| ds.meta.is_rare(h)).count();
        let frequent = ds.meta.n_hoi() - rare;
        assert!(rare > 0, "no rare classes");
        assert!(frequent > 0, "no frequent classes");
    }

    #[test]
    fn counts_match_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&quick_spec(30), dir.path()).unwrap();
        let mut counted = vec![0usize; ds.meta.n_hoi()];
        for gts in ds.gts.values() {
            for p in &gts.pairs {
                for &h in &p.hoi {
                    counted[h] += 1;
                }
            }
        }
        assert_eq!(counted, ds.meta.train_counts);
        assert_eq!(counted.iter().sum::<usize>(), 30);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&quick_spec(2), dir.path()).unwrap();
        let loaded = SynthSpec::load(&dir.path().join(SPEC_FILE)).unwrap();
        assert_eq!(loaded, quick_spec(2));
    }
}
