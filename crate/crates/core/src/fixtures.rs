//! Deterministic synthetic "faces": a smooth background with high-frequency
//! textures at canonical eye, nose and mouth positions, plus a 68-point
//! landmark layout whose facial groups outline the textured regions.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{save_image, ImageTensor, LandmarkGroup, LandmarkSet, Point};
use crate::seeding;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub side: usize,
    /// Maximum per-channel difference between the two background corner
    /// colours.
    pub background_contrast: f64,
    pub blob_count: usize,
    pub blob_amplitude: f64,
    /// Peak-to-peak amplitude of the region textures.
    pub texture_amplitude: f64,
    /// Maximum random shift of the face layout, in pixels at side 64.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            side: 64,
            background_contrast: 0.3,
            blob_count: 3,
            blob_amplitude: 0.05,
            texture_amplitude: 0.2,
            jitter: 2.0,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 || self.side % 16 != 0 {
            return Err(Error::Config(format!(
                "fixture side must be a multiple of 16 and at least 32, got {}",
                self.side
            )));
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude)
            || !(0.0..=0.5).contains(&self.background_contrast)
            || !(0.0..=0.2).contains(&self.blob_amplitude)
            || !(0.0..=3.0).contains(&self.jitter)
        {
            return Err(Error::Config("fixture amplitudes out of range".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Checker,
    HorizontalStripes,
    VerticalStripes,
    Diagonal,
}

impl Texture {
    /// 0/1 pattern with 2-pixel cells, offset by `phase`.
    fn value(self, y: usize, x: usize, phase: usize) -> f64 {
        let (y, x) = (y + phase, x + phase);
        let bit = match self {
            Texture::Checker => (y / 2 + x / 2) % 2,
            Texture::HorizontalStripes => (y / 2) % 2,
            Texture::VerticalStripes => (x / 2) % 2,
            Texture::Diagonal => ((x + y) / 2) % 2,
        };
        bit as f64
    }
}

/// An axis-aligned ellipse region.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn ring(&self, n: usize, start: f64) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let t = start + i as f64 / n as f64 * std::f64::consts::TAU;
                Point::new(self.cx + self.rx * t.cos(), self.cy + self.ry * t.sin())
            })
            .collect()
    }
}

struct Layout {
    regions: [(LandmarkGroup, Ellipse); 4],
    face: Ellipse,
}

fn layout<R: Rng + ?Sized>(spec: &FixtureSpec, rng: &mut R) -> Layout {
    let k = spec.side as f64 / 64.0;
    let j = spec.jitter;
    let mut shift = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let (sx, sy) = (shift(), shift());
    let e = |cx: f64, cy: f64, rx: f64, ry: f64| Ellipse {
        cx: (cx + sx) * k,
        cy: (cy + sy) * k,
        rx: rx * k,
        ry: ry * k,
    };
    Layout {
        regions: [
            (LandmarkGroup::LeftEye, e(21.0, 24.0, 7.0, 4.0)),
            (LandmarkGroup::RightEye, e(43.0, 24.0, 7.0, 4.0)),
            (LandmarkGroup::Nose, e(32.0, 35.0, 4.5, 6.0)),
            (LandmarkGroup::Mouth, e(32.0, 48.0, 10.0, 4.5)),
        ],
        face: e(32.0, 34.0, 25.0, 26.0),
    }
}

fn landmarks_for(layout: &Layout, side: usize) -> LandmarkSet {
    let mut points = vec![Point::new(0.0, 0.0); 68];
    let face = layout.face;
    // Jaw 0-16 along the lower half of the face outline.
    for i in 0..17 {
        let t = std::f64::consts::PI * (i as f64 / 16.0);
        points[i] = Point::new(face.cx - face.rx * t.cos(), face.cy + face.ry * t.sin() * 0.95);
    }
    for (group, ell) in &layout.regions {
        let range = group.dlib68_range();
        let ring = match group {
            LandmarkGroup::Mouth => {
                // Outer lip 48-59, inner lip 60-67.
                let mut r = ell.ring(12, std::f64::consts::PI);
                let inner = Ellipse {
                    rx: ell.rx * 0.6,
                    ry: ell.ry * 0.5,
                    ..*ell
                };
                r.extend(inner.ring(8, std::f64::consts::PI));
                r
            }
            _ => ell.ring(range.len(), std::f64::consts::PI),
        };
        for (slot, p) in range.zip(ring) {
            points[slot] = p;
        }
    }
    // Brows 17-26 above the eyes.
    for (b, (_, eye)) in layout.regions[..2].iter().enumerate() {
        for i in 0..5 {
            let t = i as f64 / 4.0;
            let x = eye.cx - eye.rx + 2.0 * eye.rx * t;
            let y = eye.cy - eye.ry * 2.0 - (t - 0.5).abs().mul_add(-2.0, 1.0);
            points[17 + 5 * b + i] = Point::new(x, y);
        }
    }
    let hi = side as f64 - 1.0;
    for p in &mut points {
        p.x = p.x.clamp(0.0, hi);
        p.y = p.y.clamp(0.0, hi);
    }
    LandmarkSet::dlib68(points).expect("68 points with fixed groups")
}

/// Generates one fixture. Panics only on an invalid `spec`; call
/// [`FixtureSpec::validate`] first for untrusted input.
pub fn gen_fixture(spec: &FixtureSpec) -> (ImageTensor, LandmarkSet) {
    spec.validate().expect("valid fixture spec");
    let mut rng = seeding::rng(spec.seed);
    let side = spec.side;
    let k = side as f64 / 64.0;

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.65));
    let corner: [f64; 3] = std::array::from_fn(|c| {
        let d = rng.random_range(-spec.background_contrast..=spec.background_contrast);
        (base[c] + d).clamp(0.05, 0.95)
    });
    let blobs: Vec<(f64, f64, f64, f64)> = (0..spec.blob_count)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(8.0..14.0) * k,
                rng.random_range(-spec.blob_amplitude..=spec.blob_amplitude),
            )
        })
        .collect();
    let layout = layout(spec, &mut rng);
    let textures: Vec<(Texture, usize, [f64; 3])> = (0..4)
        .map(|_| {
            let t = match rng.random_range(0..4) {
                0 => Texture::Checker,
                1 => Texture::HorizontalStripes,
                2 => Texture::VerticalStripes,
                _ => Texture::Diagonal,
            };
            let phase = rng.random_range(0..4);
            let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.0));
            (t, phase, tint)
        })
        .collect();

    let denom = 2.0 * (side as f64 - 1.0);
    let img = ImageTensor::from_fn(side, side, |y, x| {
        let s = (x + y) as f64 / denom;
        let blob: f64 = blobs
            .iter()
            .map(|(by, bx, sigma, amp)| {
                let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        let mut px: [f64; 3] = std::array::from_fn(|c| base[c] + (corner[c] - base[c]) * s + blob);
        for ((_, ell), (tex, phase, tint)) in layout.regions.iter().zip(&textures) {
            if ell.contains(y, x) {
                let v = tex.value(y, x, *phase) - 0.5;
                for c in 0..3 {
                    px[c] += spec.texture_amplitude * v * tint[c];
                }
            }
        }
        px.map(|v| v.clamp(0.0, 1.0))
    })
    .expect("fixture dimensions are valid");
    let landmarks = landmarks_for(&layout, side);
    (img, landmarks)
}

/// Deterministic file name stem of item `index`.
pub fn item_stem(index: usize) -> String {
    format!("fixture_{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image: String,
    pub landmarks: String,
    pub seed: u64,
    /// 1 = real.
    pub label: u8,
    pub image_sha256: String,
    pub landmarks_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub base_seed: u64,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Per-item seed for index `index` of a dataset seeded with `base_seed`.
pub fn item_seed(base_seed: u64, index: usize) -> u64 {
    seeding::derive(base_seed, &[0xF1C7, index as u64])
}

/// Writes `count` fixtures (PNG + landmark JSON) and `manifest.json` into
/// `out_dir`, creating it if needed.
pub fn gen_dataset(count: usize, template: &FixtureSpec, out_dir: &Path, base_seed: u64) -> Result<Manifest> {
    template.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let items = (0..count)
        .map(|i| {
            let seed = item_seed(base_seed, i);
            let (img, lm) = gen_fixture(&FixtureSpec {
                seed,
                ..template.clone()
            });
            let stem = item_stem(i);
            let image = format!("{stem}.png");
            let landmarks = format!("{stem}.landmarks.json");
            save_image(&img, &out_dir.join(&image))?;
            lm.save(&out_dir.join(&landmarks))?;
            Ok(ManifestItem {
                image_sha256: sha256_file(&out_dir.join(&image))?,
                landmarks_sha256: sha256_file(&out_dir.join(&landmarks))?,
                image,
                landmarks,
                seed,
                label: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        base_seed,
        items,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{load_image, sobel_magnitude};
    use crate::perturb::{select_high_freq_pixels, GanPerturbConfig};

    #[test]
    fn same_seed_same_fixture() {
        let spec = FixtureSpec {
            seed: 42,
            ..Default::default()
        };
        let (a, la) = gen_fixture(&spec);
        let (b, lb) = gen_fixture(&spec);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = gen_fixture(&FixtureSpec {
            seed: 43,
            ..Default::default()
        });
        assert_ne!(a, c);
    }

    #[test]
    fn regions_are_textured_above_gamma() {
        for side in [64, 256] {
            for seed in 0..10 {
                let (img, lm) = gen_fixture(&FixtureSpec {
                    side,
                    seed,
                    ..Default::default()
                });
                lm.validate_bounds(side, side).unwrap();
                let grad = sobel_magnitude(&img);
                for group in LandmarkGroup::ALL {
                    let hull = crate::imaging::convex_hull(&lm.group_points(group).unwrap()).unwrap();
                    let region = crate::imaging::rasterize_hull(&hull, side, side);
                    let strong = region.intersect(&grad.at_least(50.0)).unwrap().count();
                    assert!(
                        strong as f64 >= 0.3 * region.count() as f64,
                        "side {side} seed {seed} {group:?}: {strong}/{}",
                        region.count()
                    );
                }
                let h = select_high_freq_pixels(&img, &lm, &GanPerturbConfig::default()).unwrap();
                assert!(!h.is_empty());
                assert!(h.is_subset_of(&lm.hull_union(side, side).unwrap()));
            }
        }
    }

    #[test]
    fn background_is_below_gamma() {
        let (img, lm) = gen_fixture(&FixtureSpec::default());
        let grad = sobel_magnitude(&img);
        let near_face = lm.hull_union(64, 64).unwrap().dilate(8);
        for y in 0..64 {
            for x in 0..64 {
                if !near_face.get(y, x) {
                    assert!(grad.get(y, x) < 50.0);
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_has_no_high_freq_pixels() {
        let (img, lm) = gen_fixture(&FixtureSpec {
            texture_amplitude: 0.0,
            ..Default::default()
        });
        let h = select_high_freq_pixels(&img, &lm, &GanPerturbConfig::default()).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn feature_regions_keep_margin() {
        for seed in 0..50 {
            let mut rng = seeding::rng(seed);
            let spec = FixtureSpec::default();
            let l = layout(&spec, &mut rng);
            for (_, e) in l.regions {
                assert!(e.cx - e.rx >= 4.0 && e.cx + e.rx <= 60.0);
                assert!(e.cy - e.ry >= 4.0 && e.cy + e.ry <= 60.0);
            }
        }
    }

    #[test]
    fn empty_dataset_writes_only_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_dataset(0, &FixtureSpec::default(), dir.path(), 1).unwrap();
        assert!(m.items.is_empty());
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }

    #[test]
    fn dataset_checksums_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = gen_dataset(100, &FixtureSpec::default(), a.path(), 7).unwrap();
        let mb = gen_dataset(100, &FixtureSpec::default(), b.path(), 7).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.items.len(), 100);
        let loaded = Manifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, ma);
        for item in &loaded.items {
            assert_eq!(sha256_file(&a.path().join(&item.image)).unwrap(), item.image_sha256);
            assert_eq!(
                sha256_file(&a.path().join(&item.landmarks)).unwrap(),
                item.landmarks_sha256
            );
            assert_eq!(
                std::fs::read(a.path().join(&item.image)).unwrap(),
                std::fs::read(b.path().join(&item.image)).unwrap()
            );
        }
        let img = load_image(&a.path().join(&loaded.items[0].image)).unwrap();
        assert_eq!(img.shape(), (64, 64));
    }
}
