//! Virtual outliers drawn from the Gaussian fitted to pooled real features
//! during training, and the OOD score a detector learns with and without the
//! uncertainty loss.
//!
//! ```text
//! cargo run --release --example ood_regularizer
//! ```

use selfperturb::detector::{forward, DetectorConfig};
use selfperturb::ood::{log_density, ood_score, sample_virtual_outliers};
use selfperturb::pipeline::{train, FixtureExperiment, RunConfig};
use selfperturb::{seeding, Result};

fn main() -> Result<()> {
    let (train_set, test_set) = FixtureExperiment::default().datasets()?;

    for beta in [0.0, 0.1] {
        let cfg = RunConfig {
            seed: 3,
            detector: DetectorConfig {
                beta,
                ..Default::default()
            },
            ..Default::default()
        };
        let outcome = train(&train_set, &cfg)?;
        let model = outcome.model()?;
        let unc: Vec<String> = outcome.curve.epochs.iter().map(|e| format!("{:.4}", e.unc)).collect();
        println!("beta = {beta}: per-epoch uncertainty loss [{}]", unc.join(", "));

        let g = outcome.checkpoint.gaussian.as_ref().expect("bank is full after training");
        let mut rng = seeding::rng(4);
        let outliers = sample_virtual_outliers(g, model.config.ood.candidates, model.config.ood.keep, &mut rng)?;
        let highest = outliers.samples.iter().map(|v| log_density(g, v)).fold(f64::NEG_INFINITY, f64::max);
        println!(
            "  {} outliers below log-density {:.2} (highest kept {:.2})",
            outliers.samples.len(),
            outliers.cutoff,
            highest
        );
        let pooled = |set: &[selfperturb::pipeline::Sample]| -> Result<Vec<Vec<f64>>> {
            set.iter().map(|s| Ok(forward(&model, &s.image)?.0.pooled)).collect()
        };
        let mean = |v: &[Vec<f64>]| v.iter().map(|f| ood_score(&model, f)).sum::<f64>() / v.len() as f64;
        println!(
            "  mean OOD score: training reals {:.3}, held-out reals {:.3}, virtual outliers {:.3}",
            mean(&pooled(&train_set[..200])?),
            mean(&pooled(&test_set)?),
            mean(&outliers.samples)
        );
    }
    Ok(())
}
