//! Sign-noise perturbations that imitate gradient-based attacks.
//!
//! Every pixel gets a random direction in `{-1, +1}^3`. Point-wise noise
//! scales each pixel's direction by its own magnitude; block-wise noise copies
//! an anchor's scaled direction over a small square around it; mixed noise is
//! the sum of the two, clipped once.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{apply_perturbation, clip_perturbation, ImageTensor, PerturbationField};

/// Which gradient-style noise pattern to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Point,
    Block,
    Mix,
}

impl GradientMode {
    pub const ALL: [GradientMode; 3] = [GradientMode::Point, GradientMode::Block, GradientMode::Mix];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientPerturbConfig {
    /// L-infinity bound in `1/255` units.
    pub eps: f64,
    /// `None` draws one of the three modes uniformly per image.
    pub mode: Option<GradientMode>,
    /// Inclusive range of block side lengths in pixels.
    pub block_side_range: (usize, usize),
    /// Per-pixel probability of being a block anchor.
    pub block_anchor_density: f64,
    pub seed: u64,
}

impl Default for GradientPerturbConfig {
    fn default() -> Self {
        Self {
            eps: 5.0,
            mode: None,
            block_side_range: (2, 8),
            block_anchor_density: 0.02,
            seed: 0,
        }
    }
}

impl GradientPerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        let (lo, hi) = self.block_side_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("invalid block side range [{lo}, {hi}]")));
        }
        if !(self.block_anchor_density >= 0.0 && self.block_anchor_density <= 1.0) {
            return Err(Error::Config(format!(
                "block anchor density {} outside [0, 1]",
                self.block_anchor_density
            )));
        }
        Ok(())
    }
}

/// Per-pixel sign vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionField {
    height: usize,
    width: usize,
    data: Vec<i8>,
}

impl DirectionField {
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [
            f64::from(self.data[i]),
            f64::from(self.data[i + 1]),
            f64::from(self.data[i + 2]),
        ]
    }

    pub fn components(&self) -> &[i8] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub fn sample_direction_field<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> DirectionField {
    let data = (0..height * width * 3)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    DirectionField {
        height,
        width,
        data,
    }
}

fn magnitude<R: Rng + ?Sized>(eps: f64, rng: &mut R) -> f64 {
    rng.random::<f64>() * eps / 255.0
}

fn scaled(alpha: f64, r: [f64; 3]) -> [f64; 3] {
    [alpha * r[0], alpha * r[1], alpha * r[2]]
}

fn pointwise_raw<R: Rng + ?Sized>(height: usize, width: usize, eps: f64, rng: &mut R) -> PerturbationField {
    let dirs = sample_direction_field(height, width, rng);
    let mut field = PerturbationField::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            let alpha = magnitude(eps, rng);
            field.set_pixel(y, x, scaled(alpha, dirs.get(y, x)));
        }
    }
    field
}

fn blockwise_raw<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> PerturbationField {
    let dirs = sample_direction_field(height, width, rng);
    let mut field = PerturbationField::zeros(height, width);
    let (lo, hi) = cfg.block_side_range;
    for y in 0..height {
        for x in 0..width {
            if !rng.random_bool(cfg.block_anchor_density) {
                continue;
            }
            let side = rng.random_range(lo..=hi);
            let value = scaled(magnitude(cfg.eps, rng), dirs.get(y, x));
            // Square centred on the anchor, cropped at the borders.
            let top = y.saturating_sub(side / 2);
            let left = x.saturating_sub(side / 2);
            let bottom = (y + side - side / 2).min(height);
            let right = (x + side - side / 2).min(width);
            for yy in top..bottom {
                for xx in left..right {
                    field.set_pixel(yy, xx, value);
                }
            }
        }
    }
    field
}

/// Independent per-pixel noise `alpha * r` with `alpha ~ U[0, eps/255]`.
pub fn gen_pointwise<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> PerturbationField {
    clip_perturbation(&pointwise_raw(height, width, cfg.eps, rng), cfg.eps)
}

/// Constant-valued squares around Bernoulli-sampled anchors. Later anchors
/// (row-major) overwrite earlier ones.
pub fn gen_blockwise<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> PerturbationField {
    clip_perturbation(&blockwise_raw(height, width, cfg, rng), cfg.eps)
}

/// Point-wise plus block-wise noise, summed before a single clip.
pub fn gen_mix<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> PerturbationField {
    let point = pointwise_raw(height, width, cfg.eps, rng);
    let block = blockwise_raw(height, width, cfg, rng);
    let sum = point.add(&block).expect("same shape");
    clip_perturbation(&sum, cfg.eps)
}

pub fn gen_field<R: Rng + ?Sized>(
    mode: GradientMode,
    height: usize,
    width: usize,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> PerturbationField {
    match mode {
        GradientMode::Point => gen_pointwise(height, width, cfg, rng),
        GradientMode::Block => gen_blockwise(height, width, cfg, rng),
        GradientMode::Mix => gen_mix(height, width, cfg, rng),
    }
}

/// Result of perturbing one image.
#[derive(Debug, Clone)]
pub struct GradientPerturbation {
    pub mode: GradientMode,
    pub field: PerturbationField,
    pub image: ImageTensor,
}

/// Draws a field (mode taken from `cfg` or sampled uniformly) and adds it to
/// `img`.
pub fn perturb_image_gradient<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &GradientPerturbConfig,
    rng: &mut R,
) -> Result<GradientPerturbation> {
    cfg.validate()?;
    let mode = match cfg.mode {
        Some(m) => m,
        None => GradientMode::ALL[rng.random_range(0..GradientMode::ALL.len())],
    };
    let field = gen_field(mode, img.height(), img.width(), cfg, rng);
    let image = apply_perturbation(img, &field)?;
    Ok(GradientPerturbation { mode, field, image })
}
