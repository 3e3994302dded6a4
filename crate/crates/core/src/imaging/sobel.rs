use super::{ImageTensor, RegionMask};

/// Single-channel gradient magnitude on the 0-255 intensity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixels whose magnitude is at least `threshold`.
    pub fn at_least(&self, threshold: f64) -> RegionMask {
        let mut mask = RegionMask::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) >= threshold {
                    mask.set(y, x, true);
                }
            }
        }
        mask
    }
}

/// Sobel gradient magnitude `sqrt(Gx^2 + Gy^2)` of the RGB-mean luminance,
/// scaled to 0-255, with edge-replicated borders.
pub fn sobel_magnitude(img: &ImageTensor) -> GradientImage {
    let (h, w) = img.shape();
    let lum: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| (p[0] + p[1] + p[2]) / 3.0 * 255.0)
        .collect();
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        lum[yy * w + xx]
    };
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            data.push((gx * gx + gy * gy).sqrt());
        }
    }
    GradientImage {
        height: h,
        width: w,
        data,
    }
}
