use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Reads an 8-bit PNG, mapping each channel value `v` to `v / 255`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|v| f64::from(*v) / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, data)
}

/// Writes the image as an 8-bit RGB PNG (values rounded to the nearest
/// `1/255` step).
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_png(path: &Path, side: u32, value: u8) {
        RgbImage::from_pixel(side, side, image::Rgb([value; 3]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn loads_black_white_and_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        for (value, expected) in [(0u8, 0.0), (255, 1.0), (128, 128.0 / 255.0)] {
            let p = dir.path().join(format!("{value}.png"));
            write_png(&p, 256, value);
            let img = load_image(&p).unwrap();
            assert_eq!(img.shape(), (256, 256));
            assert!(img.data().iter().all(|v| *v == expected));
        }
        assert!((128.0f64 / 255.0 - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(&dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Decode { .. })));
        let small = dir.path().join("small.png");
        write_png(&small, 8, 0);
        assert!(matches!(load_image(&small), Err(Error::Dimension { .. })));
        let odd = dir.path().join("odd.png");
        write_png(&odd, 40, 0);
        assert!(matches!(load_image(&odd), Err(Error::Dimension { .. })));
    }

    #[test]
    fn round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = ImageTensor::filled(32, 32, 0.0).unwrap();
        let p = dir.path().join("zeros.png");
        save_image(&zeros, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), zeros);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = ImageTensor::from_fn(64, 48, |_, _| rng.random::<[f64; 3]>()).unwrap();
        let p = dir.path().join("random.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 510.0 + 1e-12, "worst {worst}");
    }

    #[test]
    fn save_to_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::filled(16, 16, 0.5).unwrap();
        let target = dir.path().join("no_such_dir").join("x.png");
        assert!(matches!(save_image(&img, &target), Err(Error::Io { .. })));
    }
}
