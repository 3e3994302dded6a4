use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{convex_hull, rasterize_hull, Point, RegionMask};
use crate::error::{Error, Result};

/// The facial regions used to locate high-frequency pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkGroup {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
}

impl LandmarkGroup {
    pub const ALL: [LandmarkGroup; 4] = [
        LandmarkGroup::LeftEye,
        LandmarkGroup::RightEye,
        LandmarkGroup::Nose,
        LandmarkGroup::Mouth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LandmarkGroup::LeftEye => "left_eye",
            LandmarkGroup::RightEye => "right_eye",
            LandmarkGroup::Nose => "nose",
            LandmarkGroup::Mouth => "mouth",
        }
    }

    /// Index range in the 68-point dlib layout.
    pub fn dlib68_range(self) -> std::ops::Range<usize> {
        match self {
            LandmarkGroup::LeftEye => 36..42,
            LandmarkGroup::RightEye => 42..48,
            LandmarkGroup::Nose => 27..36,
            LandmarkGroup::Mouth => 48..68,
        }
    }
}

/// Ordered facial keypoints plus named index groups.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    groups: BTreeMap<String, Vec<usize>>,
}

/// On-disk layout: `{"points": [[x, y], ...], "groups": {"name": [i, ...]}}`.
#[derive(Debug, Serialize, Deserialize)]
struct LandmarkFile {
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<BTreeMap<String, Vec<usize>>>,
}

impl LandmarkSet {
    /// Builds a set with explicit groups. Every group must reference valid
    /// indices and contain at least three points.
    pub fn new(points: Vec<Point>, groups: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        for (name, idx) in &groups {
            if idx.len() < 3 {
                return Err(Error::Landmarks(format!(
                    "group {name} has {} points, need at least 3",
                    idx.len()
                )));
            }
            if let Some(bad) = idx.iter().find(|i| **i >= points.len()) {
                return Err(Error::Landmarks(format!(
                    "group {name} references point {bad} of {}",
                    points.len()
                )));
            }
        }
        Ok(Self { points, groups })
    }

    /// Builds a set using the dlib-68 default grouping.
    pub fn dlib68(points: Vec<Point>) -> Result<Self> {
        if points.len() < 68 {
            return Err(Error::Landmarks(format!(
                "default grouping needs 68 points, got {}",
                points.len()
            )));
        }
        let groups = LandmarkGroup::ALL
            .iter()
            .map(|g| (g.name().to_string(), g.dlib68_range().collect()))
            .collect();
        Self::new(points, groups)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    pub fn group_points(&self, group: LandmarkGroup) -> Result<Vec<Point>> {
        let idx = self
            .groups
            .get(group.name())
            .ok_or_else(|| Error::Landmarks(format!("missing group {}", group.name())))?;
        Ok(idx.iter().map(|i| self.points[*i]).collect())
    }

    /// Checks that every point lies inside a `height x width` image.
    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<()> {
        for p in &self.points {
            if !(0.0..width as f64).contains(&p.x) || !(0.0..height as f64).contains(&p.y) {
                return Err(Error::Landmarks(format!(
                    "point ({}, {}) outside {height}x{width} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Union of the rasterized convex hulls of the four facial groups.
    pub fn hull_union(&self, height: usize, width: usize) -> Result<RegionMask> {
        let mut mask = RegionMask::new(height, width);
        for group in LandmarkGroup::ALL {
            let hull = convex_hull(&self.group_points(group)?)?;
            mask = mask.union(&rasterize_hull(&hull, height, width))?;
        }
        Ok(mask)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LandmarkFile = serde_json::from_str(text)?;
        let points = file.points.iter().map(|p| Point::new(p[0], p[1])).collect();
        match file.groups {
            Some(groups) => Self::new(points, groups),
            None => Self::dlib68(points),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LandmarkFile {
            points: self.points.iter().map(|p| [p.x, p.y]).collect(),
            groups: Some(self.groups.clone()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Sibling landmark path for an image: `<dir>/<stem>.landmarks.json`.
    pub fn sibling_path(image: &Path, dir: Option<&Path>) -> PathBuf {
        let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let dir = dir.or_else(|| image.parent()).unwrap_or_else(|| Path::new("."));
        dir.join(format!("{stem}.landmarks.json"))
    }
}
