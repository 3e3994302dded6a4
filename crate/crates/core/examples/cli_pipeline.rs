//! The command-line workflow driven from code: fixtures, perturbation with
//! noise sidecars, training, evaluation and clustering, all under one
//! working directory.
//!
//! ```text
//! cargo run --release --example cli_pipeline -- [workdir]
//! ```

use std::path::PathBuf;

use selfperturb::eval::KMeansConfig;
use selfperturb::fixtures::FixtureSpec;
use selfperturb::perturb::{PerturbMode, PerturbSettings};
use selfperturb::pipeline::{cmd_cluster, cmd_eval, cmd_perturb, cmd_synth_fixtures, cmd_train, RunConfig};

fn main() -> selfperturb::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("selfperturb-pipeline"));
    let spec = FixtureSpec::default();
    cmd_synth_fixtures(&work.join("train"), 200, &spec, 1)?;
    cmd_synth_fixtures(&work.join("test"), 60, &spec, 2)?;

    let settings = PerturbSettings::default();
    let mut noise_dirs = Vec::new();
    for mode in [PerturbMode::Point, PerturbMode::Block, PerturbMode::Gc, PerturbMode::Auto] {
        let dir = work.join(format!("adv_{mode}"));
        let m = cmd_perturb(&work.join("test"), &dir, mode, &settings, 5, None)?;
        println!("{mode}: {} perturbed, {} skipped", m.items.len(), m.skipped.len());
        if mode != PerturbMode::Auto {
            noise_dirs.push(dir);
        }
    }

    let outcome = cmd_train(&work.join("train"), &RunConfig::default(), &work.join("model"), None)?;
    println!("trained for {} steps", outcome.curve.steps.len());
    let report = cmd_eval(
        &work.join("model/model.json"),
        &work.join("test"),
        &work.join("adv_auto"),
        &work.join("eval.json"),
    )?;
    println!("auto: AUC {:.4}, accuracy {:.3}", report.auc, report.accuracy);
    for (source, s) in &report.per_source {
        println!("  {source:>10}: n = {:3}, mean score {:.3}", s.n, s.mean_score);
    }

    let clusters = cmd_cluster(&noise_dirs, &KMeansConfig::default(), &work.join("clusters.json"))?;
    print!("{}", clusters.to_text());
    println!("outputs in {}", work.display());
    Ok(())
}
