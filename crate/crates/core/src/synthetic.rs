//! Generated two-texture image sets for smoke runs and tests.
//!
//! Positive images carry vertical stripes and negative images horizontal
//! ones, each with a random period, phase and per-pixel noise, so the classes
//! are separable by orientation alone.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassDirs, ClassLabel, Split};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Images per class in the training split.
    pub train_per_class: usize,
    /// Images per class in the validation split.
    pub val_per_class: usize,
    pub size: usize,
    /// Peak-to-peak amplitude of the uniform pixel noise, on a 0-255 scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_per_class: 100,
            val_per_class: 25,
            size: 32,
            noise: 40.0,
            seed: 0,
        }
    }
}

pub fn stripe_image<R: Rng + ?Sized>(label: ClassLabel, size: usize, noise: f64, rng: &mut R) -> RgbImage {
    let period = rng.random_range(4..=8) as f64;
    let phase = rng.random_range(0.0..period);
    let base = rng.random_range(60.0..100.0);
    let contrast = rng.random_range(80.0..140.0);
    let side = size as u32;
    RgbImage::from_fn(side, side, |x, y| {
        let t = if label.is_positive() { x } else { y } as f64;
        let wave = (std::f64::consts::TAU * (t + phase) / period).sin();
        let v = base + contrast * 0.5 * (1.0 + wave) + rng.random_range(-0.5..0.5) * noise;
        let g = v.round().clamp(0.0, 255.0) as u8;
        Rgb([g, g, g])
    })
}

/// Writes `root/{train,val}/{positive,negative}/NNNN.png`.
pub fn write_synthetic_dataset(root: &Path, spec: &SyntheticSpec, dirs: &ClassDirs) -> Result<()> {
    if spec.size < 8 || spec.train_per_class == 0 || spec.val_per_class == 0 {
        return Err(Error::InvalidConfig(
            "synthetic: size must be at least 8 and every split non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for (split, n) in [(Split::Train, spec.train_per_class), (Split::Val, spec.val_per_class)] {
        for label in ClassLabel::ALL {
            let dir = root.join(split.dir_name()).join(dirs.dir_for(label));
            for i in 0..n {
                let img = stripe_image(label, spec.size, spec.noise, &mut rng);
                let mut png = Vec::new();
                img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                    .map_err(|e| Error::io(&dir, std::io::Error::other(e)))?;
                write_atomic(&dir.join(format!("{i:04}.png")), &png)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{scan_dataset, DatasetLayout};

    #[test]
    fn layout_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            train_per_class: 3,
            val_per_class: 2,
            size: 16,
            ..Default::default()
        };
        write_synthetic_dataset(dir.path(), &spec, &ClassDirs::default()).unwrap();
        let m = scan_dataset(dir.path(), &DatasetLayout::default()).unwrap();
        assert_eq!(m.counts(Split::Train).total(), 6);
        assert_eq!(m.counts(Split::Val).positive, 2);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn orientation_separates_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for label in ClassLabel::ALL {
            let img = stripe_image(label, 32, 0.0, &mut rng);
            // mean absolute difference along each axis
            let mut dx = 0.0;
            let mut dy = 0.0;
            for y in 0..31 {
                for x in 0..31 {
                    let p = f64::from(img.get_pixel(x, y)[0]);
                    dx += (f64::from(img.get_pixel(x + 1, y)[0]) - p).abs();
                    dy += (f64::from(img.get_pixel(x, y + 1)[0]) - p).abs();
                }
            }
            if label.is_positive() {
                assert!(dx > 10.0 * dy.max(1.0));
            } else {
                assert!(dy > 10.0 * dx.max(1.0));
            }
        }
    }
}
