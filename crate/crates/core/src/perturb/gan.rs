//! Gradient colour patches on high-frequency facial regions, imitating the
//! localized colour aberrations left by GAN-based attacks.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    apply_perturbation, clip_perturbation, sobel_magnitude, ImageTensor, LandmarkSet,
    PerturbationField, RegionMask,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanPerturbConfig {
    /// Inclusive range for the per-image bound, in `1/255` units.
    pub eps_range: (u32, u32),
    /// Sobel magnitude threshold on the 0-255 scale.
    pub gamma: f64,
    /// Range of the per-pixel probability of becoming a patch anchor.
    pub subset_prob_range: (f64, f64),
    /// Inclusive range of patch side lengths.
    pub patch_side_range: (usize, usize),
    /// Probability that an anchor receives the shared dominant patch.
    pub dominant_patch_prob: f64,
    pub seed: u64,
}

impl Default for GanPerturbConfig {
    fn default() -> Self {
        Self {
            eps_range: (10, 70),
            gamma: 50.0,
            subset_prob_range: (0.016, 0.040),
            patch_side_range: (2, 25),
            dominant_patch_prob: 0.8,
            seed: 0,
        }
    }
}

impl GanPerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        let (e0, e1) = self.eps_range;
        if e0 < 1 || e0 > e1 {
            return Err(Error::Config(format!("invalid eps range [{e0}, {e1}]")));
        }
        let (p0, p1) = self.subset_prob_range;
        if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) || p0 > p1 {
            return Err(Error::Config(format!("invalid subset probability range [{p0}, {p1}]")));
        }
        let (s0, s1) = self.patch_side_range;
        if s0 < 1 || s0 > s1 {
            return Err(Error::Config(format!("invalid patch side range [{s0}, {s1}]")));
        }
        if !(0.0..=1.0).contains(&self.dominant_patch_prob) {
            return Err(Error::Config(format!(
                "dominant patch probability {} outside [0, 1]",
                self.dominant_patch_prob
            )));
        }
        Ok(())
    }
}

/// A small patch of linearly interpolated colour offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientColorPatch {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientColorPatch {
    /// Interpolates from `c0` to `c1` along direction `theta` (radians,
    /// measured from the +x axis towards +y). The pixel with the smallest
    /// projection gets `c0`, the largest gets `c1`. With `transpose` the
    /// finished patch is transposed.
    pub fn linear(
        height: usize,
        width: usize,
        c0: [f64; 3],
        c1: [f64; 3],
        theta: f64,
        transpose: bool,
    ) -> Self {
        let (cos, sin) = (theta.cos(), theta.sin());
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let proj: Vec<f64> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| (x as f64 - cx) * cos + (y as f64 - cy) * sin)
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut data = Vec::with_capacity(height * width * 3);
        for t in &proj {
            let s = if span > 1e-12 { (t - lo) / span } else { 0.5 };
            for c in 0..3 {
                data.push(c0[c] + (c1[c] - c0[c]) * s);
            }
        }
        let patch = Self {
            height,
            width,
            data,
        };
        if transpose {
            patch.transposed()
        } else {
            patch
        }
    }

    fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.extend_from_slice(&self.get(y, x));
            }
        }
        Self {
            height: self.width,
            width: self.height,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the patch centred on `(y, x)`, cropping at the field borders.
    pub fn stamp(&self, field: &mut PerturbationField, y: usize, x: usize) {
        let top = y as isize - (self.height / 2) as isize;
        let left = x as isize - (self.width / 2) as isize;
        for py in 0..self.height {
            let fy = top + py as isize;
            if fy < 0 || fy >= field.height() as isize {
                continue;
            }
            for px in 0..self.width {
                let fx = left + px as isize;
                if fx < 0 || fx >= field.width() as isize {
                    continue;
                }
                field.set_pixel(fy as usize, fx as usize, self.get(py, px));
            }
        }
    }
}

/// Draws a random patch: sides uniform in `side_range`, endpoint colours
/// uniform in `[-eps/255, eps/255]^3`, direction uniform in `[0, 2pi)` and a
/// fair-coin transpose.
pub fn gen_gc_patch<R: Rng + ?Sized>(eps: f64, side_range: (usize, usize), rng: &mut R) -> GradientColorPatch {
    let e = eps / 255.0;
    let h = rng.random_range(side_range.0..=side_range.1);
    let w = rng.random_range(side_range.0..=side_range.1);
    let mut color = || -> [f64; 3] { std::array::from_fn(|_| rng.random_range(-e..=e)) };
    let c0 = color();
    let c1 = color();
    let theta = rng.random_range(0.0..TAU);
    let transpose = rng.random::<bool>();
    GradientColorPatch::linear(h, w, c0, c1, theta, transpose)
}

/// High-frequency set `H`: pixels inside the union of the facial landmark
/// hulls whose Sobel magnitude reaches `gamma`.
///
/// Returns an empty mask when nothing passes the threshold; fails only when the
/// hull union itself covers no pixel.
pub fn select_high_freq_pixels(
    img: &ImageTensor,
    landmarks: &LandmarkSet,
    cfg: &GanPerturbConfig,
) -> Result<RegionMask> {
    cfg.validate()?;
    landmarks.validate_bounds(img.height(), img.width())?;
    let union = landmarks.hull_union(img.height(), img.width())?;
    if union.is_empty() {
        return Err(Error::DegenerateRegion(
            "landmark hulls cover no pixel centre".to_string(),
        ));
    }
    sobel_magnitude(img).at_least(cfg.gamma).intersect(&union)
}

/// Result of a GAN-style perturbation.
#[derive(Debug, Clone)]
pub struct GanPerturbation {
    /// Bound drawn for this image, in `1/255` units.
    pub eps: f64,
    pub anchors: usize,
    pub field: PerturbationField,
    pub image: ImageTensor,
}

pub fn perturb_image_gan<R: Rng + ?Sized>(
    img: &ImageTensor,
    landmarks: &LandmarkSet,
    cfg: &GanPerturbConfig,
    rng: &mut R,
) -> Result<GanPerturbation> {
    let high_freq = select_high_freq_pixels(img, landmarks, cfg)?;
    if high_freq.is_empty() {
        return Err(Error::DegenerateRegion(format!(
            "no pixel inside the facial hulls reaches gamma = {}",
            cfg.gamma
        )));
    }
    let eps = f64::from(rng.random_range(cfg.eps_range.0..=cfg.eps_range.1));
    let (p0, p1) = cfg.subset_prob_range;
    let p = if p1 > p0 { rng.random_range(p0..=p1) } else { p0 };
    let anchors: Vec<(usize, usize)> = high_freq.pixels().filter(|_| rng.random_bool(p)).collect();

    let dominant = gen_gc_patch(eps, cfg.patch_side_range, rng);
    let mut field = PerturbationField::zeros(img.height(), img.width());
    for &(y, x) in &anchors {
        if rng.random_bool(cfg.dominant_patch_prob) {
            dominant.stamp(&mut field, y, x);
        } else {
            gen_gc_patch(eps, cfg.patch_side_range, rng).stamp(&mut field, y, x);
        }
    }
    let field = clip_perturbation(&field, eps);
    let image = apply_perturbation(img, &field)?;
    Ok(GanPerturbation {
        eps,
        anchors: anchors.len(),
        field,
        image,
    })
}
