//! Self-perturbation generators and the mode dispatch used by training, the
//! experiments and the CLI.

pub mod gan;
pub mod gradient;

pub use gan::{
    gen_gc_patch, perturb_image_gan, select_high_freq_pixels, GanPerturbConfig, GanPerturbation,
    GradientColorPatch,
};
pub use gradient::{
    gen_blockwise, gen_mix, gen_pointwise, perturb_image_gradient, sample_direction_field,
    DirectionField, GradientMode, GradientPerturbConfig, GradientPerturbation,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, LandmarkSet, PerturbationField};

/// Perturbation family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Point,
    Block,
    Mix,
    /// Gradient colour patches on facial regions.
    Gc,
    /// One of point / block / mix, drawn uniformly per image.
    Gradient,
    /// One of point / block / mix / gc, drawn uniformly per image.
    Auto,
}

impl PerturbMode {
    pub const CONCRETE: [PerturbMode; 4] = [
        PerturbMode::Point,
        PerturbMode::Block,
        PerturbMode::Mix,
        PerturbMode::Gc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Point => "point",
            PerturbMode::Block => "block",
            PerturbMode::Mix => "mix",
            PerturbMode::Gc => "gc",
            PerturbMode::Gradient => "gradient",
            PerturbMode::Auto => "auto",
        }
    }

    pub fn needs_landmarks(self) -> bool {
        matches!(self, PerturbMode::Gc | PerturbMode::Auto)
    }

    fn gradient_mode(self) -> Option<GradientMode> {
        match self {
            PerturbMode::Point => Some(GradientMode::Point),
            PerturbMode::Block => Some(GradientMode::Block),
            PerturbMode::Mix => Some(GradientMode::Mix),
            _ => None,
        }
    }

    /// Resolves the sampling modes to a concrete one.
    pub fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> PerturbMode {
        match self {
            PerturbMode::Gradient => PerturbMode::CONCRETE[rng.random_range(0..3)],
            PerturbMode::Auto => PerturbMode::CONCRETE[rng.random_range(0..4)],
            m => m,
        }
    }
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "point" => PerturbMode::Point,
            "block" => PerturbMode::Block,
            "mix" => PerturbMode::Mix,
            "gc" => PerturbMode::Gc,
            "gradient" | "grad" => PerturbMode::Gradient,
            "auto" => PerturbMode::Auto,
            other => return Err(Error::Config(format!("unknown perturbation mode {other:?}"))),
        })
    }
}

/// Settings for both perturbation families.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSettings {
    pub gradient: GradientPerturbConfig,
    pub gan: GanPerturbConfig,
}

/// One perturbed image together with what produced it.
#[derive(Debug, Clone)]
pub struct Perturbed {
    pub mode: PerturbMode,
    /// Bound used, in `1/255` units.
    pub eps: f64,
    pub field: PerturbationField,
    pub image: ImageTensor,
}

/// Perturbs `img` with `mode`, resolving sampling modes first. Gradient modes
/// ignore `landmarks`; `gc` requires them.
pub fn perturb<R: Rng + ?Sized>(
    img: &ImageTensor,
    landmarks: Option<&LandmarkSet>,
    mode: PerturbMode,
    settings: &PerturbSettings,
    rng: &mut R,
) -> Result<Perturbed> {
    let mode = mode.resolve(rng);
    if let Some(gm) = mode.gradient_mode() {
        let cfg = GradientPerturbConfig {
            mode: Some(gm),
            ..settings.gradient.clone()
        };
        let out = perturb_image_gradient(img, &cfg, rng)?;
        return Ok(Perturbed {
            mode,
            eps: cfg.eps,
            field: out.field,
            image: out.image,
        });
    }
    let landmarks = landmarks
        .ok_or_else(|| Error::Landmarks("gc perturbation requires landmarks".to_string()))?;
    let out = perturb_image_gan(img, landmarks, &settings.gan, rng)?;
    Ok(Perturbed {
        mode,
        eps: out.eps,
        field: out.field,
        image: out.image,
    })
}
