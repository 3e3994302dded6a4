//! Point-wise, block-wise and mixed gradient-pattern perturbations of one
//! fixture, with their bounds and coverage, saved as PNGs.
//!
//! ```text
//! cargo run --release --example perturb_gradient -- [out_dir] [eps]
//! ```

use std::path::PathBuf;

use selfperturb::fixtures::{gen_fixture, FixtureSpec};
use selfperturb::imaging::{residual, save_image};
use selfperturb::perturb::{perturb_image_gradient, GradientMode, GradientPerturbConfig};
use selfperturb::seeding;

fn main() -> selfperturb::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("selfperturb-gradient"));
    let eps: f64 = args.next().and_then(|e| e.parse().ok()).unwrap_or(5.0);
    std::fs::create_dir_all(&out).map_err(|e| selfperturb::Error::io(&out, e))?;

    let (img, _) = gen_fixture(&FixtureSpec {
        seed: 3,
        ..Default::default()
    });
    save_image(&img, &out.join("source.png"))?;
    for mode in GradientMode::ALL {
        let cfg = GradientPerturbConfig {
            eps,
            mode: Some(mode),
            ..Default::default()
        };
        let mut rng = seeding::rng(11);
        let p = perturb_image_gradient(&img, &cfg, &mut rng)?;
        let applied = residual(&p.image, &img)?;
        let touched = (0..img.height())
            .flat_map(|y| (0..img.width()).map(move |x| (y, x)))
            .filter(|&(y, x)| p.field.is_nonzero(y, x))
            .count();
        let name = format!("{mode:?}").to_lowercase();
        println!(
            "{name:>5}: max |eta| = {:.2}/255, max applied = {:.2}/255, {:.1}% of pixels touched",
            p.field.linf() * 255.0,
            applied.linf() * 255.0,
            100.0 * touched as f64 / (img.height() * img.width()) as f64
        );
        save_image(&p.image, &out.join(format!("{name}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
