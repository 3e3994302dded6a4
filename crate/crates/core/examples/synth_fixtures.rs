//! Writes procedural face fixtures with dlib-68 landmark files and a manifest.
//!
//! ```text
//! cargo run --release --example synth_fixtures -- [out_dir] [count]
//! ```

use std::path::PathBuf;

use selfperturb::fixtures::{gen_dataset, FixtureSpec};
use selfperturb::imaging::{load_image, sobel_magnitude, LandmarkSet};

fn main() -> selfperturb::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("selfperturb-fixtures"));
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(8);

    let spec = FixtureSpec::default();
    let manifest = gen_dataset(count, &spec, &out, 1)?;
    println!("wrote {} fixtures to {}", manifest.items.len(), out.display());

    for item in manifest.items.iter().take(4) {
        let path = out.join(&item.image);
        let img = load_image(&path)?;
        let lm = LandmarkSet::load(&LandmarkSet::sibling_path(&path, None))?;
        let hulls = lm.hull_union(img.height(), img.width())?;
        let sharp = sobel_magnitude(&img).at_least(50.0).intersect(&hulls)?;
        println!(
            "{}: hull union {} px, {} px at Sobel >= 50",
            item.image,
            hulls.count(),
            sharp.count()
        );
    }
    Ok(())
}
