//! The command implementations behind the `selfperturb` binary. Each one
//! writes its outputs plus a `run.json` stamp with the tool version and the
//! effective configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{split_heldout, CrossConfig, CrossOutcome, FixtureExperiment};
use super::noise::{list_sidecars, read_sidecar, write_sidecar};
use super::{load_samples, perturb_sample, run_cross, score_images, source_tag, train, LabeledImage, RunConfig, TrainOutcome};
use crate::detector::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{accuracy_at, auc, kmeans_noise, ClusterReport, KMeansConfig, ScoredSample, REPORT_VERSION};
use crate::fixtures::{gen_dataset, sha256_file, FixtureSpec, Manifest, MANIFEST_FILE};
use crate::imaging::{residual, save_image};
use crate::perturb::{perturb, PerturbMode, PerturbSettings};
use crate::seeding;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SELFPERTURB_WORKERS";
pub const STAMP_FILE: &str = "run.json";
pub const PERTURB_MANIFEST_VERSION: u32 = 1;

/// Sizes the global worker pool from `workers`, else from
/// `SELFPERTURB_WORKERS`, else the number of CPUs. Results never depend on
/// the worker count.
pub fn configure_workers(workers: Option<usize>) -> Result<()> {
    let n = match workers {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
            Err(_) => 0,
        },
    };
    // A pool that is already initialized keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Tool version and effective configuration of a command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStamp {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_stamp<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    let stamp = RunStamp {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: serde_json::to_value(config)?,
    };
    write_text(&dir.join(STAMP_FILE), &serde_json::to_string_pretty(&stamp)?)
}

#[derive(Serialize)]
struct SynthArgs<'a> {
    count: usize,
    seed: u64,
    fixture: &'a FixtureSpec,
}

/// Writes `count` fixtures with landmarks and a manifest into `out`.
pub fn cmd_synth_fixtures(out: &Path, count: usize, spec: &FixtureSpec, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    prepare_dir(out)?;
    let manifest = gen_dataset(count, spec, out, seed)?;
    write_stamp(
        out,
        "synth-fixtures",
        &SynthArgs {
            count,
            seed,
            fixture: spec,
        },
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbItem {
    pub source: String,
    pub image: String,
    pub noise: String,
    pub mode: PerturbMode,
    /// Magnitude drawn for this image, in `1/255` units.
    pub eps: f64,
    pub seed: u64,
    pub source_sha256: String,
    pub image_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbManifest {
    pub version: u32,
    pub mode: PerturbMode,
    pub seed: u64,
    pub items: Vec<PerturbItem>,
    pub skipped: Vec<SkippedItem>,
}

#[derive(Serialize)]
struct PerturbArgs<'a> {
    input: &'a Path,
    landmarks: Option<&'a Path>,
    mode: PerturbMode,
    seed: u64,
    settings: &'a PerturbSettings,
}

/// Perturbs every PNG of `input` and writes the images, noise sidecars
/// (applied offsets) and `manifest.json` to `out`. Images whose gc
/// perturbation is impossible are skipped; skipping all of them is an error.
pub fn cmd_perturb(
    input: &Path,
    out: &Path,
    mode: PerturbMode,
    settings: &PerturbSettings,
    seed: u64,
    landmarks: Option<&Path>,
) -> Result<PerturbManifest> {
    settings.gradient.validate()?;
    settings.gan.validate()?;
    let samples = load_samples(input, landmarks)?;
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("no PNG images in {}", input.display())));
    }
    prepare_dir(out)?;
    let results: Vec<_> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let item_seed = seeding::derive(seed, &[0x9E7, i as u64]);
            let outcome = if mode == PerturbMode::Auto {
                perturb_sample(s, mode, settings, item_seed)
            } else {
                perturb(&s.image, s.landmarks.as_ref(), mode, settings, &mut seeding::rng(item_seed))
            };
            (item_seed, outcome)
        })
        .collect();

    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (s, (item_seed, outcome)) in samples.iter().zip(results) {
        let p = match outcome {
            Ok(p) => p,
            Err(e @ (Error::DegenerateRegion(_) | Error::Landmarks(_))) => {
                log::warn!("skipping {}: {e}", s.name);
                skipped.push(SkippedItem {
                    source: s.name.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let stem = s.name.strip_suffix(".png").unwrap_or(&s.name).to_string();
        let image = format!("{stem}.png");
        save_image(&p.image, &out.join(&image))?;
        write_sidecar(out, &stem, &residual(&p.image, &s.image)?, p.mode, p.eps)?;
        items.push(PerturbItem {
            source: s.name.clone(),
            image_sha256: sha256_file(&out.join(&image))?,
            image,
            noise: format!("{stem}{}", super::noise::NOISE_HEADER_SUFFIX),
            mode: p.mode,
            eps: p.eps,
            seed: item_seed,
            source_sha256: s.sha256.clone(),
        });
    }
    let manifest = PerturbManifest {
        version: PERTURB_MANIFEST_VERSION,
        mode,
        seed,
        items,
        skipped,
    };
    write_text(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    write_stamp(
        out,
        "perturb",
        &PerturbArgs {
            input,
            landmarks,
            mode,
            seed,
            settings,
        },
    )?;
    if manifest.items.is_empty() {
        return Err(Error::DegenerateRegion(format!(
            "all {} images were skipped",
            manifest.skipped.len()
        )));
    }
    Ok(manifest)
}

pub const CHECKPOINT_FILE: &str = "model.json";
pub const CURVE_FILE: &str = "curve.json";
pub const CONFIG_FILE: &str = "config.json";

/// Trains on the real images of `real` and writes `model.json`,
/// `curve.json` and the echoed `config.json` to `out`.
pub fn cmd_train(real: &Path, config: &RunConfig, out: &Path, landmarks: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = load_samples(real, landmarks)?;
    prepare_dir(out)?;
    let effective = RunConfig {
        real_dir: Some(real.to_path_buf()),
        landmarks_dir: landmarks.map(Path::to_path_buf),
        out_dir: Some(out.to_path_buf()),
        ..config.clone()
    };
    let outcome = train(&samples, &effective)?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_text(&out.join(CURVE_FILE), &serde_json::to_string_pretty(&outcome.curve)?)?;
    write_text(&out.join(CONFIG_FILE), &effective.to_json()?)?;
    write_stamp(out, "train", &effective)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub n: usize,
    pub mean_score: f64,
    pub accuracy: f64,
    /// AUC of this source against all real images (adversarial sources only).
    pub auc_vs_real: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub tool_version: String,
    pub auc: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub n_real: usize,
    pub n_adv: usize,
    pub per_source: BTreeMap<String, SourceSummary>,
    /// Evaluated images whose hash appears in the training set.
    pub training_overlap: usize,
}

impl EvalReport {
    /// Metrics over already-scored samples.
    pub fn from_scores(samples: &[ScoredSample], training_overlap: usize) -> Result<Self> {
        let reals: Vec<&ScoredSample> = samples.iter().filter(|s| s.label == 1).collect();
        let mut groups: BTreeMap<String, Vec<ScoredSample>> = BTreeMap::new();
        for s in samples {
            groups.entry(s.source.clone()).or_default().push(s.clone());
        }
        let per_source = groups
            .into_iter()
            .map(|(tag, group)| {
                let is_adv = group.iter().all(|s| s.label == 0);
                let auc_vs_real = if is_adv && !reals.is_empty() {
                    let mut both = group.clone();
                    both.extend(reals.iter().map(|s| (*s).clone()));
                    Some(auc(&both)?)
                } else {
                    None
                };
                let summary = SourceSummary {
                    n: group.len(),
                    mean_score: group.iter().map(|s| s.score).sum::<f64>() / group.len() as f64,
                    accuracy: accuracy_at(&group, 0.5)?,
                    auc_vs_real,
                };
                Ok((tag, summary))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            auc: auc(samples)?,
            accuracy: accuracy_at(samples, 0.5)?,
            threshold: 0.5,
            n_real: reals.len(),
            n_adv: samples.len() - reals.len(),
            per_source,
            training_overlap,
        })
    }
}

fn adv_sources(adv: &Path) -> BTreeMap<String, String> {
    let path = adv.join(MANIFEST_FILE);
    let Ok(text) = std::fs::read_to_string(path) else {
        return BTreeMap::new();
    };
    match serde_json::from_str::<PerturbManifest>(&text) {
        Ok(m) => m
            .items
            .into_iter()
            .map(|it| (it.image, source_tag(it.mode, it.eps)))
            .collect(),
        Err(_) => BTreeMap::new(),
    }
}

/// Scores real (label 1) and adversarial (label 0) images with a checkpoint
/// and writes the JSON report.
pub fn cmd_eval(model: &Path, real: &Path, adv: &Path, report: &Path) -> Result<EvalReport> {
    let checkpoint = Checkpoint::load(model)?;
    let detector = checkpoint.model()?;
    let tags = adv_sources(adv);
    let mut images = Vec::new();
    let mut hashes = Vec::new();
    for (dir, label) in [(real, 1u8), (adv, 0u8)] {
        for s in load_samples(dir, None)? {
            let source = if label == 1 {
                "real".to_string()
            } else {
                tags.get(&s.name).cloned().unwrap_or_else(|| "adv".to_string())
            };
            hashes.push(s.sha256);
            images.push(LabeledImage {
                image: s.image,
                label,
                source,
            });
        }
    }
    let overlap = hashes
        .iter()
        .filter(|h| checkpoint.training_images.binary_search(h).is_ok())
        .count();
    if overlap > 0 {
        log::warn!("{overlap} evaluated images were also used for training");
    }
    let scores = score_images(&detector, &images)?;
    let out = EvalReport::from_scores(&scores, overlap)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    write_text(report, &serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

/// Clusters the noise sidecars of several directories, each directory name
/// serving as the source tag. Writes the JSON report and a text table next
/// to it (`<report>.txt`).
pub fn cmd_cluster(noise_dirs: &[PathBuf], cfg: &KMeansConfig, report: &Path) -> Result<ClusterReport> {
    let mut fields = Vec::new();
    for dir in noise_dirs {
        let tag = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("noise")
            .to_string();
        for path in list_sidecars(dir)? {
            fields.push((tag.clone(), read_sidecar(&path)?.1));
        }
    }
    let out = kmeans_noise(&fields, cfg)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    write_text(report, &serde_json::to_string_pretty(&out)?)?;
    let mut txt = report.as_os_str().to_owned();
    txt.push(".txt");
    write_text(Path::new(&txt), &out.to_text())?;
    Ok(out)
}

#[derive(Serialize)]
struct CrossArgs<'a> {
    cross: &'a CrossConfig,
    data: CrossData<'a>,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum CrossData<'a> {
    Fixtures(&'a FixtureExperiment),
    Real { dir: &'a Path, test_count: usize },
}

/// Runs the cross-generator and cross-magnitude experiments. Without `real`,
/// in-memory fixtures described by `fixtures` are used. Writes both matrices
/// as JSON, CSV and text plus every trained checkpoint under `workdir`.
pub fn cmd_cross(
    cfg: &CrossConfig,
    workdir: &Path,
    real: Option<&Path>,
    fixtures: &FixtureExperiment,
) -> Result<CrossOutcome> {
    cfg.run.validate()?;
    prepare_dir(workdir)?;
    let (train_set, test_set, data) = match real {
        Some(dir) => {
            let samples = load_samples(dir, None)?;
            let test_count = samples.len() / 5;
            let (a, b) = split_heldout(samples, test_count)?;
            (a, b, CrossData::Real { dir, test_count })
        }
        None => {
            let (a, b) = fixtures.datasets()?;
            (a, b, CrossData::Fixtures(fixtures))
        }
    };
    let outcome = run_cross(cfg, &train_set, &test_set)?;
    for (name, matrix) in [("mode_matrix", &outcome.mode_matrix), ("eps_matrix", &outcome.eps_matrix)] {
        write_text(&workdir.join(format!("{name}.json")), &matrix.to_json()?)?;
        write_text(&workdir.join(format!("{name}.csv")), &matrix.to_csv())?;
        write_text(&workdir.join(format!("{name}.txt")), &matrix.to_text())?;
    }
    let models = workdir.join("models");
    prepare_dir(&models)?;
    for (name, ck) in &outcome.checkpoints {
        ck.save(&models.join(format!("{name}.json")))?;
    }
    write_stamp(workdir, "cross", &CrossArgs { cross: cfg, data })?;
    Ok(outcome)
}
