//! K-means over point, block and gc residuals of the same fixtures.
//!
//! ```text
//! cargo run --release --example noise_clustering -- [per_family] [k]
//! ```

use rayon::prelude::*;
use selfperturb::eval::{kmeans_noise, KMeansConfig};
use selfperturb::fixtures::FixtureSpec;
use selfperturb::imaging::residual;
use selfperturb::perturb::{PerturbMode, PerturbSettings};
use selfperturb::pipeline::{fixture_samples, perturb_sample};
use selfperturb::{seeding, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let per_family = args.next().and_then(|n| n.parse().ok()).unwrap_or(60);
    let k = args.next().and_then(|n| n.parse().ok()).unwrap_or(3);

    let samples = fixture_samples(per_family, &FixtureSpec::default(), 17);
    let settings = PerturbSettings::default();
    let mut fields = Vec::new();
    for mode in [PerturbMode::Point, PerturbMode::Block, PerturbMode::Gc] {
        let family: Vec<_> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let p = perturb_sample(s, mode, &settings, seeding::derive(23, &[mode as u64, i as u64]))?;
                Ok((mode.to_string(), residual(&p.image, &s.image)?))
            })
            .collect::<Result<_>>()?;
        fields.extend(family);
    }
    let report = kmeans_noise(
        &fields,
        &KMeansConfig {
            k,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_text());
    println!(
        "restart inertias: {:?}",
        report.restart_inertia.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>()
    );
    Ok(())
}
