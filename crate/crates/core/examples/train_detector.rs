//! Trains a detector on synthetic fixtures with auto-mode self-perturbation
//! and reports held-out AUC.
//!
//! ```text
//! cargo run --release --example train_detector
//! ```

use selfperturb::eval::{accuracy_at, auc};
use selfperturb::perturb::PerturbMode;
use selfperturb::pipeline::{build_test_set, score_images, train, FixtureExperiment, RunConfig};

fn main() -> selfperturb::Result<()> {
    let experiment = FixtureExperiment::default();
    let (train_set, test_set) = experiment.datasets()?;
    let cfg = RunConfig {
        seed: 7,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let outcome = train(&train_set, &cfg)?;
    for (i, e) in outcome.curve.epochs.iter().enumerate() {
        println!("epoch {}: cls {:.4}  unc {:.4}  acc {:.3}", i + 1, e.cls, e.unc, e.accuracy);
    }
    let model = outcome.model()?;
    let test = build_test_set(&test_set, PerturbMode::Auto, &cfg.perturb, experiment.test_seed)?;
    let scores = score_images(&model, &test)?;
    println!(
        "held-out AUC {:.4}, accuracy {:.3} ({} images, {:.1}s)",
        auc(&scores)?,
        accuracy_at(&scores, 0.5)?,
        scores.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
