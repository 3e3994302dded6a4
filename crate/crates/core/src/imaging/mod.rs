//! Image tensors, perturbation fields and the pixel-level operations shared by
//! the perturbation generators, the detector and the evaluation code.
//!
//! Pixel values live in `[0, 1]`. Perturbation magnitudes are quoted in
//! `1/255` units (so `eps = 5.0` bounds offsets by `5/255`), and are divided by
//! 255 at the point of use.

mod hull;
mod io;
mod landmarks;
mod sobel;

pub use hull::{convex_hull, rasterize_hull, Point};
pub use io::{load_image, save_image};
pub use landmarks::{LandmarkGroup, LandmarkSet};
pub use sobel::{sobel_magnitude, GradientImage};

use crate::error::{Error, Result};

/// Number of colour channels carried by every tensor.
pub const CHANNELS: usize = 3;

/// Spatial sides must be multiples of this (four stride-2 detector blocks).
pub const SIDE_MULTIPLE: usize = 16;

/// An `H x W x 3` RGB image with values in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds an image, validating the shape and the `[0, 1]` value domain.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_side(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::Domain(format!(
                "expected {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Builds an image from a per-pixel function returning RGB.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Values quantized to 8 bits, the way they are written to PNG.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

fn check_side(height: usize, width: usize) -> Result<()> {
    if height < SIDE_MULTIPLE || width < SIDE_MULTIPLE {
        return Err(Error::Dimension {
            height,
            width,
            reason: "sides must be at least 16",
        });
    }
    if height % SIDE_MULTIPLE != 0 || width % SIDE_MULTIPLE != 0 {
        return Err(Error::Dimension {
            height,
            width,
            reason: "sides must be multiples of 16",
        });
    }
    Ok(())
}

/// Signed per-pixel RGB offsets. `bound` records the L-infinity bound (in
/// `1/255` units) the field was last clipped to, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    bound: Option<f64>,
}

impl PerturbationField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
            bound: None,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::Domain(format!(
                "expected {} offsets, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            bound: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.bound = None;
        &mut self.data
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, value: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&value);
        self.bound = None;
    }

    /// Largest absolute offset.
    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True if the pixel at `(y, x)` has any nonzero channel.
    pub fn is_nonzero(&self, y: usize, x: usize) -> bool {
        self.pixel(y, x).iter().any(|v| *v != 0.0)
    }

    /// Element-wise sum; the result carries no bound.
    pub fn add(&self, other: &PerturbationField) -> Result<PerturbationField> {
        same_shape(self.shape(), other.shape())?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(PerturbationField {
            height: self.height,
            width: self.width,
            data,
            bound: None,
        })
    }
}

/// A boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        same_shape(self.shape(), other.shape())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Ok(RegionMask {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<RegionMask> {
        same_shape(self.shape(), other.shape())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(RegionMask {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Chebyshev dilation: a pixel is set if any set pixel lies within
    /// `radius` rows and columns of it.
    pub fn dilate(&self, radius: usize) -> RegionMask {
        let (h, w) = self.shape();
        // Separable max filter: rows then columns.
        let mut rows = RegionMask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                if (lo..=hi).any(|xx| self.get(y, xx)) {
                    rows.set(y, x, true);
                }
            }
        }
        let mut out = RegionMask::new(h, w);
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                if (lo..=hi).any(|yy| rows.get(yy, x)) {
                    out.set(y, x, true);
                }
            }
        }
        out
    }
}

fn same_shape(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// Clamps every offset to `[-eps/255, eps/255]`.
pub fn clip_perturbation(field: &PerturbationField, eps: f64) -> PerturbationField {
    assert!(eps > 0.0, "eps must be positive");
    let limit = eps / 255.0;
    PerturbationField {
        height: field.height,
        width: field.width,
        data: field.data.iter().map(|v| v.clamp(-limit, limit)).collect(),
        bound: Some(eps),
    }
}

/// Adds `field` to `img` and clamps the result back into `[0, 1]`.
pub fn apply_perturbation(img: &ImageTensor, field: &PerturbationField) -> Result<ImageTensor> {
    same_shape(img.shape(), field.shape())?;
    let data = img
        .data
        .iter()
        .zip(&field.data)
        .map(|(x, d)| (x + d).clamp(0.0, 1.0))
        .collect();
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        data,
    })
}

/// `a - b`, unclipped.
pub fn residual(a: &ImageTensor, b: &ImageTensor) -> Result<PerturbationField> {
    same_shape(b.shape(), a.shape())?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(PerturbationField {
        height: a.height,
        width: a.width,
        data,
        bound: None,
    })
}
