//! Gradient-colour-patch perturbation restricted to high-frequency pixels of
//! the facial regions.
//!
//! ```text
//! cargo run --release --example perturb_gan -- [out_dir]
//! ```

use std::path::PathBuf;

use selfperturb::fixtures::{gen_fixture, FixtureSpec};
use selfperturb::imaging::save_image;
use selfperturb::perturb::{perturb_image_gan, select_high_freq_pixels, GanPerturbConfig};
use selfperturb::seeding;

fn main() -> selfperturb::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("selfperturb-gan"));
    std::fs::create_dir_all(&out).map_err(|e| selfperturb::Error::io(&out, e))?;

    let cfg = GanPerturbConfig::default();
    for seed in 0..4 {
        let (img, landmarks) = gen_fixture(&FixtureSpec {
            seed,
            ..Default::default()
        });
        let hulls = landmarks.hull_union(img.height(), img.width())?;
        let high_freq = select_high_freq_pixels(&img, &landmarks, &cfg)?;
        let mut rng = seeding::rng(seeding::derive(5, &[seed]));
        let p = perturb_image_gan(&img, &landmarks, &cfg, &mut rng)?;

        let near = hulls.dilate(25);
        let (mut inside, mut total) = (0, 0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if p.field.is_nonzero(y, x) {
                    total += 1;
                    inside += usize::from(near.get(y, x));
                }
            }
        }
        println!(
            "fixture {seed}: |H| = {:4} of {:4} hull px, eps = {:2}/255, {:3} anchors, {inside}/{total} changed px near the hulls",
            high_freq.count(),
            hulls.count(),
            p.eps,
            p.anchors
        );
        save_image(&img, &out.join(format!("source_{seed}.png")))?;
        save_image(&p.image, &out.join(format!("gc_{seed}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
