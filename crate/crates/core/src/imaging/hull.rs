use serde::{Deserialize, Serialize};

use super::RegionMask;
use crate::error::{Error, Result};

/// A point in pixel coordinates: `x` is the column, `y` the row. Pixel
/// `(row, col)` has its centre at `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Twice the signed area of `o, a, b`; positive for a counter-clockwise turn.
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by the monotone chain. Returns the extreme points in
/// counter-clockwise order (positive signed area in `(x, y)` coordinates),
/// starting from the lowest-`x`, then lowest-`y` vertex. Points lying on a hull
/// edge are not reported as vertices.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "convex hull needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();

    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(Error::DegenerateInput(
            "all points are collinear".to_string(),
        ));
    }
    Ok(lower)
}

/// Marks every pixel whose centre lies inside or on the counter-clockwise
/// convex polygon `hull`.
pub fn rasterize_hull(hull: &[Point], height: usize, width: usize) -> RegionMask {
    const TOL: f64 = 1e-9;
    let mut mask = RegionMask::new(height, width);
    if hull.is_empty() || height == 0 || width == 0 {
        return mask;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in hull {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let col_lo = x0.ceil().max(0.0) as usize;
    let row_lo = y0.ceil().max(0.0) as usize;
    if x1 < 0.0 || y1 < 0.0 {
        return mask;
    }
    let col_hi = (x1.floor() as usize).min(width - 1);
    let row_hi = (y1.floor() as usize).min(height - 1);
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let c = Point::new(col as f64, row as f64);
            let inside = (0..hull.len()).all(|i| {
                let a = hull[i];
                let b = hull[(i + 1) % hull.len()];
                cross(a, b, c) >= -TOL
            });
            if inside {
                mask.set(row, col, true);
            }
        }
    }
    mask
}
