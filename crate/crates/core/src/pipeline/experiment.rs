use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_test_set, score_images, train, LabeledImage, RunConfig, Sample};
use crate::detector::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{cross_matrix, eps_cross, MatrixReport};
use crate::fixtures::{gen_fixture, item_seed, item_stem, FixtureSpec};
use crate::imaging::ImageTensor;
use crate::perturb::{PerturbMode, PerturbSettings};
use crate::seeding;

/// `count` in-memory fixtures, quantized to 8 bits exactly as if they had
/// been written to and read back from PNG.
pub fn fixture_samples(count: usize, template: &FixtureSpec, base_seed: u64) -> Vec<Sample> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (img, lm) = gen_fixture(&FixtureSpec {
                seed: item_seed(base_seed, i),
                ..template.clone()
            });
            let quantized = img.to_u8().iter().map(|v| f64::from(*v) / 255.0).collect();
            let img = ImageTensor::new(img.height(), img.width(), quantized).expect("quantized fixture is valid");
            Sample::in_memory(format!("{}.png", item_stem(i)), img, Some(lm))
        })
        .collect()
}

/// Splits off the last `test_count` samples as a held-out set.
pub fn split_heldout(mut samples: Vec<Sample>, test_count: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if test_count > samples.len() {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot hold out {test_count}",
            samples.len()
        )));
    }
    let test = samples.split_off(samples.len() - test_count);
    Ok((samples, test))
}

/// Fixture dataset sizes and seeds for desk-scale experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureExperiment {
    pub fixture: FixtureSpec,
    /// Real images given to training (half of them get perturbed).
    pub train_count: usize,
    /// Held-out images (half of them get perturbed).
    pub test_count: usize,
    pub data_seed: u64,
    pub test_seed: u64,
}

impl Default for FixtureExperiment {
    fn default() -> Self {
        Self {
            fixture: FixtureSpec::default(),
            train_count: 800,
            test_count: 200,
            data_seed: 1,
            test_seed: 2,
        }
    }
}

impl FixtureExperiment {
    /// Generates the training and held-out fixtures.
    pub fn datasets(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let all = fixture_samples(self.train_count + self.test_count, &self.fixture, self.data_seed);
        split_heldout(all, self.test_count)
    }
}

/// Cross-generator and cross-magnitude experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossConfig {
    pub modes: Vec<PerturbMode>,
    /// Gradient-pattern magnitudes in `1/255` units.
    pub eps_list: Vec<f64>,
    /// Perturbation used along the magnitude axis.
    pub eps_mode: PerturbMode,
    pub run: RunConfig,
    pub test_seed: u64,
}

impl Default for CrossConfig {
    fn default() -> Self {
        Self {
            modes: PerturbMode::CONCRETE.to_vec(),
            eps_list: vec![5.0, 10.0],
            eps_mode: PerturbMode::Auto,
            run: RunConfig::default(),
            test_seed: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossOutcome {
    pub mode_matrix: MatrixReport,
    pub eps_matrix: MatrixReport,
    /// `("mode-<name>" | "eps-<value>", checkpoint)` in row order.
    pub checkpoints: Vec<(String, Checkpoint)>,
}

fn settings_at(base: &PerturbSettings, eps: f64) -> PerturbSettings {
    let mut s = base.clone();
    s.gradient.eps = eps;
    s
}

fn run_axis(
    axis: &str,
    rows: &[(String, RunConfig)],
    tests: &[(String, Vec<LabeledImage>)],
    train_set: &[Sample],
    // Magnitudes of both axes when sweeping eps.
    eps_values: Option<&[f64]>,
) -> Result<(MatrixReport, Vec<(String, Checkpoint)>)> {
    let slots: Mutex<Vec<Option<Checkpoint>>> = Mutex::new(vec![None; rows.len()]);
    let runner = |i: usize| {
        let out = train(train_set, &rows[i].1)?;
        let model = out.model()?;
        let scored = tests
            .iter()
            .map(|(_, set)| score_images(&model, set))
            .collect::<Result<Vec<_>>>()?;
        slots.lock().expect("no poisoned runner")[i] = Some(out.checkpoint);
        Ok(scored)
    };
    let names: Vec<String> = rows.iter().map(|(n, _)| n.clone()).collect();
    let test_names: Vec<String> = tests.iter().map(|(n, _)| n.clone()).collect();
    let matrix = match eps_values {
        Some(eps) => eps_cross(eps, eps, runner)?,
        None => cross_matrix(axis, &names, &test_names, runner)?,
    };
    let checkpoints = names
        .into_iter()
        .zip(slots.into_inner().expect("no poisoned runner"))
        .map(|(n, c)| (format!("{axis}-{n}"), c.expect("every row trained")))
        .collect();
    Ok((matrix, checkpoints))
}

/// Trains one detector per mode and per magnitude on `train_set` and scores
/// each against held-out sets built from `test_set`.
pub fn run_cross(cfg: &CrossConfig, train_set: &[Sample], test_set: &[Sample]) -> Result<CrossOutcome> {
    if cfg.modes.is_empty() || cfg.eps_list.is_empty() {
        return Err(Error::Config("cross experiment needs at least one mode and one eps".to_string()));
    }
    cfg.run.validate()?;
    let base = &cfg.run.perturb;

    let mode_tests = cfg
        .modes
        .iter()
        .map(|m| {
            let seed = seeding::derive(cfg.test_seed, &[0x30DE, *m as u64]);
            Ok((m.to_string(), build_test_set(test_set, *m, base, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mode_rows: Vec<(String, RunConfig)> = cfg
        .modes
        .iter()
        .map(|m| {
            (
                m.to_string(),
                RunConfig {
                    mode: *m,
                    ..cfg.run.clone()
                },
            )
        })
        .collect();
    let (mode_matrix, mut checkpoints) = run_axis("mode", &mode_rows, &mode_tests, train_set, None)?;

    let eps_tests = cfg
        .eps_list
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let seed = seeding::derive(cfg.test_seed, &[0xE95, j as u64]);
            Ok((format!("{e}"), build_test_set(test_set, cfg.eps_mode, &settings_at(base, *e), seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let eps_rows: Vec<(String, RunConfig)> = cfg
        .eps_list
        .iter()
        .map(|e| {
            (
                format!("{e}"),
                RunConfig {
                    mode: cfg.eps_mode,
                    perturb: settings_at(base, *e),
                    ..cfg.run.clone()
                },
            )
        })
        .collect();
    let (eps_matrix, eps_checkpoints) = run_axis("eps", &eps_rows, &eps_tests, train_set, Some(&cfg.eps_list))?;
    checkpoints.extend(eps_checkpoints);
    Ok(CrossOutcome {
        mode_matrix,
        eps_matrix,
        checkpoints,
    })
}
