//! Trains one detector per self-perturbation and per magnitude, then scores
//! every detector against every held-out perturbation.
//!
//! ```text
//! cargo run --release --example cross_generator -- [train_count] [test_count]
//! ```

use selfperturb::pipeline::{run_cross, CrossConfig, FixtureExperiment};

fn main() -> selfperturb::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_count = args.next().and_then(|n| n.parse().ok()).unwrap_or(400);
    let test_count = args.next().and_then(|n| n.parse().ok()).unwrap_or(100);
    let experiment = FixtureExperiment {
        train_count,
        test_count,
        ..Default::default()
    };
    let (train_set, test_set) = experiment.datasets()?;
    let started = std::time::Instant::now();
    let out = run_cross(&CrossConfig::default(), &train_set, &test_set)?;
    println!("{}", out.mode_matrix.to_text());
    println!("{}", out.eps_matrix.to_text());
    println!("{}", out.mode_matrix.to_csv());
    println!("{} detectors trained in {:.1}s", out.checkpoints.len(), started.elapsed().as_secs_f64());
    Ok(())
}
