//! Visual feature extractor: patch embedding plus a transformer encoder.
//!
//! The backbone is a strided patch embedding (equivalent to a single
//! convolution with kernel = stride), which keeps the desk-scale model tiny
//! while preserving the interface a heavier backbone would have. Partial
//! edge patches are zero-padded, so token count is the ceiling division of
//! each spatial dim by the stride.

use super::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use super::params::{ParamStore, Session};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense pixel image, RGB interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl PixelImage {
    pub fn new(h: usize, w: usize) -> Self {
        PixelImage {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Token matrix of flattened `stride x stride` RGB patches, row-major
    /// over the patch grid; edge patches are zero-padded.
    pub fn patches(&self, stride: usize) -> (Tensor, usize, usize) {
        let hp = self.h.div_ceil(stride);
        let wp = self.w.div_ceil(stride);
        let dim = stride * stride * 3;
        let mut t = Tensor::zeros(hp * wp, dim);
        for py in 0..hp {
            for px in 0..wp {
                let row = py * wp + px;
                for dy in 0..stride {
                    for dx in 0..stride {
                        let y = py * stride + dy;
                        let x = px * stride + dx;
                        if y < self.h && x < self.w {
                            let rgb = self.get(y, x);
                            let at = (dy * stride + dx) * 3;
                            t.row_slice_mut(row)[at..at + 3].copy_from_slice(&rgb);
                        }
                    }
                }
            }
        }
        (t, hp, wp)
    }
}

/// Fixed 2D sinusoidal position encoding, `[hp*wp, dim]`: first half of the
/// channels encode the row index, second half the column index.
pub fn sinusoidal_2d(hp: usize, wp: usize, dim: usize) -> Tensor {
    assert!(dim % 4 == 0, "position encoding dim must be divisible by 4");
    let half = dim / 2;
    let mut t = Tensor::zeros(hp * wp, dim);
    for py in 0..hp {
        for px in 0..wp {
            let row = py * wp + px;
            let slot = t.row_slice_mut(row);
            for i in 0..half / 2 {
                let freq = 10000f64.powf(2.0 * i as f64 / half as f64);
                slot[2 * i] = (py as f64 / freq).sin();
                slot[2 * i + 1] = (py as f64 / freq).cos();
                slot[half + 2 * i] = (px as f64 / freq).sin();
                slot[half + 2 * i + 1] = (px as f64 / freq).cos();
            }
        }
    }
    t
}

/// Encoder output: feature tokens, the matching position encoding, and the
/// patch-grid shape.
#[derive(Debug, Clone)]
pub struct VisualMemory {
    /// `[HW, C]` feature tokens.
    pub z: Var,
    /// `[HW, C]` constant position encoding.
    pub pos: Var,
    pub hp: usize,
    pub wp: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

impl EncoderLayer {
    fn init(name: &str, dim: usize, heads: usize, ffn: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::init(&format!("{name}.attn"), dim, heads, store, rng),
            norm1: LayerNorm::init(format!("{name}.norm1"), dim, store),
            ffn: FeedForward::init(&format!("{name}.ffn"), dim, ffn, store, rng),
            norm2: LayerNorm::init(format!("{name}.norm2"), dim, store),
        }
    }

    fn forward(&self, s: &mut Session, x: Var, pos: Var) -> Var {
        let q = s.tape.add(x, pos);
        let (a, _) = self.attn.forward(s, q, q, x, None);
        let r1 = s.tape.add(x, a);
        let x = self.norm1.forward(s, r1);
        let f = self.ffn.forward(s, x);
        let r2 = s.tape.add(x, f);
        self.norm2.forward(s, r2)
    }
}

/// Patch embedding plus encoder stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub stride: usize,
    pub dim: usize,
    embed: Linear,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn init(
        dim: usize,
        heads: usize,
        ffn: usize,
        layers: usize,
        stride: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embed = Linear::init("encoder.embed", stride * stride * 3, dim, store, rng);
        let layers = (0..layers)
            .map(|i| EncoderLayer::init(&format!("encoder.layer{i}"), dim, heads, ffn, store, rng))
            .collect();
        Encoder {
            stride,
            dim,
            embed,
            layers,
        }
    }

    /// Expected token-grid shape for an input image.
    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, s: &mut Session, img: &PixelImage) -> Result<VisualMemory> {
        if img.h < self.stride || img.w < self.stride {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} smaller than backbone stride {}",
                img.h, img.w, self.stride
            )));
        }
        let (patches, hp, wp) = img.patches(self.stride);
        let tokens = s.tape.leaf(patches);
        let mut x = self.embed.forward(s, tokens);
        let pos = s.tape.constant(sinusoidal_2d(hp, wp, self.dim));
        for layer in &self.layers {
            x = layer.forward(s, x, pos);
        }
        Ok(VisualMemory { z: x, pos, hp, wp })
    }
}
