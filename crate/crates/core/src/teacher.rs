//! Vision-language teacher interface and the deterministic stub used at
//! desk scale.
//!
//! The stub keeps every interface and shape of a real text/image encoder
//! while costing nothing: text embeddings are unit vectors derived from a
//! hash of the prompt, visual embeddings are a fixed seeded linear map of
//! pixel patches. Category semantics are meaningless, but determinism,
//! dimensionality, and normalization all hold, which is what the
//! architecture and its tests exercise.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::encoder::PixelImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// Default prompt templates compiled into the binary; a config may point at
/// a file with the same line format instead. `{}` is replaced by the
/// category name.
pub const DEFAULT_PROMPTS: &str = include_str!("../assets/prompts.txt");

/// Text and visual embedding provider.
pub trait SemanticTeacher {
    /// Unit-norm text embedding of one prompt, length `dim()`.
    fn text_embed(&self, prompt: &str) -> Vec<f64>;
    /// Unit-norm per-token visual features, `[tokens, dim()]`.
    fn visual_embed(&self, img: &PixelImage) -> Tensor;
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
}

/// Parses prompt templates: one per line, blank lines ignored.
pub fn parse_templates(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Mean text embedding over all templates applied to a category name,
/// re-normalized to unit length.
pub fn category_embedding(
    teacher: &dyn SemanticTeacher,
    templates: &[String],
    category: &str,
) -> Vec<f64> {
    assert!(!templates.is_empty(), "need at least one prompt template");
    let mut acc = vec![0.0; teacher.dim()];
    for t in templates {
        let prompt = t.replace("{}", category);
        for (a, v) in acc.iter_mut().zip(teacher.text_embed(&prompt)) {
            *a += v;
        }
    }
    normalize(&mut acc);
    acc
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Hash-seeded stand-in teacher.
pub struct StubTeacher {
    dim: usize,
    seed: u64,
    stride: usize,
    /// `[stride*stride*3, dim]` fixed projection with unit-norm columns.
    proj: Tensor,
}

impl StubTeacher {
    pub fn new(dim: usize, seed: u64) -> Self {
        let stride = 8;
        let mut rng = crate::rng::stream(seed, crate::rng::streams::TEACHER);
        let mut proj = Tensor::randn(stride * stride * 3, dim, 1.0, &mut rng);
        for j in 0..dim {
            let norm: f64 = (0..proj.rows).map(|i| proj.get(i, j).powi(2)).sum::<f64>().sqrt();
            for i in 0..proj.rows {
                let v = proj.get(i, j) / norm;
                proj.set(i, j, v);
            }
        }
        StubTeacher { dim, seed, stride, proj }
    }
}

impl SemanticTeacher for StubTeacher {
    fn text_embed(&self, prompt: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut v: Vec<f64> = (0..self.dim).map(|_| normal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }

    fn visual_embed(&self, img: &PixelImage) -> Tensor {
        let (patches, _, _) = img.patches(self.stride);
        let mut out = patches.matmul(&self.proj);
        for i in 0..out.rows {
            let row = out.row_slice_mut(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
        }
        out
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "stub"
    }
}

/// Builds a teacher by provider id. Only the stub ships here; external
/// providers plug in through this registry.
pub fn provider(name: &str, dim: usize, seed: u64) -> Result<std::boxed::Box<dyn SemanticTeacher>> {
    match name {
        "stub" => Ok(std::boxed::Box::new(StubTeacher::new(dim, seed))),
        other => Err(Error::Config(format!(
            "unknown teacher provider '{other}' (available: stub)"
        ))),
    }
}
