//! Reproducible runs: configuration, datasets, training with on-the-fly
//! self-perturbation, scoring, and the fixture experiments behind the CLI.

mod commands;
mod experiment;
pub mod noise;

pub use commands::{
    cmd_cluster, cmd_cross, cmd_eval, cmd_perturb, cmd_synth_fixtures, cmd_train, configure_workers,
    EvalReport, PerturbItem, PerturbManifest, RunStamp, SkippedItem, SourceSummary, CHECKPOINT_FILE,
    CONFIG_FILE, CURVE_FILE, STAMP_FILE, WORKERS_ENV,
};
pub use experiment::{
    fixture_samples, run_cross, split_heldout, CrossConfig, CrossOutcome, FixtureExperiment,
};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{predict, Checkpoint, DetectorConfig, DetectorModel, LossBreakdown, Trainer};
use crate::error::{Error, Result};
use crate::eval::ScoredSample;
use crate::fixtures::sha256_hex;
use crate::imaging::{load_image, ImageTensor, LandmarkSet};
use crate::perturb::{perturb, PerturbMode, PerturbSettings, Perturbed};
use crate::seeding;

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Self-perturbation used for the adversarial half.
    #[serde(default = "default_mode")]
    pub mode: PerturbMode,
    #[serde(default)]
    pub perturb: PerturbSettings,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_mode() -> PerturbMode {
    PerturbMode::Auto
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            seed: 0,
            mode: default_mode(),
            perturb: PerturbSettings::default(),
            detector: DetectorConfig::default(),
            real_dir: None,
            landmarks_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: RUN_CONFIG_VERSION,
            });
        }
        self.perturb.gradient.validate()?;
        self.perturb.gan.validate()?;
        self.detector.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == u64::from(RUN_CONFIG_VERSION) => {}
            other => {
                return Err(Error::Version {
                    found: other.unwrap_or(0) as u32,
                    expected: RUN_CONFIG_VERSION,
                })
            }
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A real image with optional landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: ImageTensor,
    pub landmarks: Option<LandmarkSet>,
    /// SHA-256 of the image (file bytes when loaded from disk).
    pub sha256: String,
}

impl Sample {
    /// In-memory sample hashed over its 8-bit pixel values.
    pub fn in_memory(name: impl Into<String>, image: ImageTensor, landmarks: Option<LandmarkSet>) -> Self {
        let sha256 = sha256_hex(&image.to_u8());
        Self {
            name: name.into(),
            image,
            landmarks,
            sha256,
        }
    }
}

/// Sorted `*.png` paths of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG of `dir` with its landmarks when a sibling
/// `<stem>.landmarks.json` exists (in `landmarks_dir`, or next to the image).
pub fn load_samples(dir: &Path, landmarks_dir: Option<&Path>) -> Result<Vec<Sample>> {
    list_images(dir)?
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let image = load_image(path)?;
            let lm_path = LandmarkSet::sibling_path(path, landmarks_dir);
            let landmarks = if lm_path.exists() {
                Some(LandmarkSet::load(&lm_path)?)
            } else {
                None
            };
            Ok(Sample {
                name: path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
                image,
                landmarks,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

/// Perturbs with `mode`. Under `auto`, an image whose gc draw fails (no
/// landmarks or no high-frequency pixels) falls back to a gradient pattern.
pub fn perturb_sample(sample: &Sample, mode: PerturbMode, settings: &PerturbSettings, seed: u64) -> Result<Perturbed> {
    let mut rng = seeding::rng(seed);
    let resolved = mode.resolve(&mut rng);
    match perturb(&sample.image, sample.landmarks.as_ref(), resolved, settings, &mut rng) {
        Err(e) if mode == PerturbMode::Auto && resolved == PerturbMode::Gc => {
            log::debug!("{}: gc failed ({e}); using a gradient pattern", sample.name);
            perturb(&sample.image, None, PerturbMode::Gradient, settings, &mut rng)
        }
        other => other,
    }
}

/// Per-step and per-epoch loss curves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub steps: Vec<LossBreakdown>,
    pub epochs: Vec<LossBreakdown>,
    /// Adversarial images skipped per epoch because perturbation failed.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: TrainingCurve,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<DetectorModel> {
        self.checkpoint.model()
    }
}

fn mean_breakdown(steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    LossBreakdown {
        cls: steps.iter().map(|s| s.cls).sum::<f64>() / n,
        unc: steps.iter().map(|s| s.unc).sum::<f64>() / n,
        total: steps.iter().map(|s| s.total).sum::<f64>() / n,
        accuracy: steps.iter().map(|s| s.accuracy).sum::<f64>() / n,
        regularized: steps.iter().any(|s| s.regularized),
    }
}

/// Trains a detector from real images only. A seeded shuffle splits them
/// 50/50; the first half is labelled real (1), the second half is freshly
/// self-perturbed every epoch and labelled adversarial (0).
pub fn train(samples: &[Sample], cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let det = DetectorConfig {
        seed: seeding::derive(cfg.seed, &[0xDE7]),
        ..cfg.detector.clone()
    };
    if samples.len() < 2 * det.batch_size {
        return Err(Error::Config(format!(
            "{} training images; need at least 2 x batch size = {}",
            samples.len(),
            2 * det.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seeding::rng(seeding::derive(cfg.seed, &[0x5917])));
    let half = samples.len() / 2;
    let reals = &order[..half];
    let advs = &order[half..2 * half];

    let mut trainer = Trainer::new(DetectorModel::init(&det)?);
    let mut curve = TrainingCurve::default();
    for epoch in 0..det.epochs {
        let perturbed: Vec<Option<ImageTensor>> = advs
            .par_iter()
            .map(|&i| {
                let seed = seeding::derive(cfg.seed, &[0xE90C, epoch as u64, i as u64]);
                match perturb_sample(&samples[i], cfg.mode, &cfg.perturb, seed) {
                    Ok(p) => Ok(Some(p.image)),
                    Err(e @ (Error::DegenerateRegion(_) | Error::Landmarks(_))) => {
                        log::warn!("skipping {}: {e}", samples[i].name);
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        curve.skipped.push(perturbed.iter().filter(|p| p.is_none()).count());
        let mut items: Vec<(&ImageTensor, u8)> = reals.iter().map(|&i| (&samples[i].image, 1u8)).collect();
        items.extend(perturbed.iter().flatten().map(|img| (img, 0u8)));
        items.shuffle(&mut seeding::rng(seeding::derive(cfg.seed, &[0x0D3E, epoch as u64])));

        let first = curve.steps.len();
        for chunk in items.chunks(det.batch_size) {
            let batch: Vec<ImageTensor> = chunk.iter().map(|(img, _)| (*img).clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|(_, l)| *l).collect();
            curve.steps.push(trainer.train_step(&batch, &labels)?);
        }
        let summary = mean_breakdown(&curve.steps[first..]);
        log::info!(
            "epoch {}: cls {:.4} unc {:.4} acc {:.3}",
            epoch + 1,
            summary.cls,
            summary.unc,
            summary.accuracy
        );
        curve.epochs.push(summary);
    }

    let gaussian = if trainer.bank().len() > det.embed_dim() {
        Some(trainer.fit_bank()?)
    } else {
        None
    };
    let model = trainer.into_model();
    let mut checkpoint = Checkpoint::new(&model);
    checkpoint.gaussian = gaussian;
    let mut hashes: Vec<String> = order[..2 * half].iter().map(|&i| samples[i].sha256.clone()).collect();
    hashes.sort();
    hashes.dedup();
    checkpoint.training_images = hashes;
    checkpoint.history = curve.epochs.clone();
    Ok(TrainOutcome { checkpoint, curve })
}

/// An image to score with its label and source tag.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: u8,
    pub source: String,
}

/// Scores images in parallel, preserving order.
pub fn score_images(model: &DetectorModel, images: &[LabeledImage]) -> Result<Vec<ScoredSample>> {
    images
        .par_iter()
        .map(|li| {
            let p = predict(model, &li.image)?;
            Ok(ScoredSample::new(p.score(), li.label, li.source.clone()))
        })
        .collect()
}

/// Labelled test set from held-out reals: the first half stays real, the
/// second half is perturbed with `mode`. Source tags are `"real"` and those
/// of [`source_tag`].
/// `"<mode>@<eps>"` for the gradient patterns and `"gc"` for gc, whose bound
/// is drawn per image.
pub fn source_tag(mode: PerturbMode, eps: f64) -> String {
    match mode {
        PerturbMode::Gc => mode.to_string(),
        _ => format!("{mode}@{eps}"),
    }
}

pub fn build_test_set(
    samples: &[Sample],
    mode: PerturbMode,
    settings: &PerturbSettings,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    let half = samples.len() / 2;
    let mut out: Vec<LabeledImage> = samples[..half]
        .iter()
        .map(|s| LabeledImage {
            image: s.image.clone(),
            label: 1,
            source: "real".to_string(),
        })
        .collect();
    let advs: Vec<Option<LabeledImage>> = samples[half..]
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            match perturb_sample(s, mode, settings, seeding::derive(seed, &[0x7E57, i as u64])) {
                Ok(p) => Ok(Some(LabeledImage {
                    image: p.image,
                    label: 0,
                    source: source_tag(p.mode, p.eps),
                })),
                Err(Error::DegenerateRegion(_) | Error::Landmarks(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    out.extend(advs.into_iter().flatten());
    Ok(out)
}
