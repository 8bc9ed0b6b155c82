//! Label-preserving geometric augmentation: zoom, shear, shift and horizontal flip.

use ndarray::{s, Array1, Array3, Array4, ArrayView3};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, LoadedSplit};
use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, FillPolicy, Image};
use crate::Scalar;

/// Which axes `shift_range` applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftAxes {
    #[default]
    Both,
    Horizontal,
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Zoom factors are drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    /// Shear angle bound, degrees.
    pub shear_deg: f64,
    /// Shift bound as a fraction of the image width/height.
    pub shift_range: f64,
    pub shift_axes: ShiftAxes,
    pub hflip: bool,
    pub fill: FillPolicy,
    /// Seeds the training data stream (shuffling and transform sampling);
    /// `None` defers to the pipeline seed.
    pub seed: Option<u64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            zoom_range: 0.2,
            shear_deg: 11.46,
            shift_range: 0.2,
            shift_axes: ShiftAxes::Both,
            hflip: true,
            fill: FillPolicy::Nearest,
            seed: None,
        }
    }
}

impl AugmentConfig {
    /// All ranges zero and no flipping: every sampled transform is the identity.
    pub fn none() -> Self {
        AugmentConfig {
            zoom_range: 0.0,
            shear_deg: 0.0,
            shift_range: 0.0,
            hflip: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("augment: {msg}")));
        for (name, v) in [
            ("zoom_range", self.zoom_range),
            ("shear_deg", self.shear_deg),
            ("shift_range", self.shift_range),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        if self.zoom_range >= 1.0 {
            return bad(format!("zoom_range must be below 1, got {}", self.zoom_range));
        }
        if self.shear_deg >= 90.0 {
            return bad(format!("shear_deg must be below 90, got {}", self.shear_deg));
        }
        if let FillPolicy::Constant(v) = self.fill {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("constant fill {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.zoom_range == 0.0 && self.shear_deg == 0.0 && self.shift_range == 0.0 && !self.hflip
    }
}

/// A 2×3 affine map from output pixel coordinates `(x, y)` to input
/// coordinates (inverse-warp convention).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn new(matrix: [[f64; 3]; 2]) -> Self {
        AffineTransform { matrix }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            m[r][0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            m[r][1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            m[r][2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        AffineTransform { matrix: m }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularTransform(det));
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let (tx, ty) = (m[0][2], m[1][2]);
        Ok(AffineTransform {
            matrix: [[a, b, -(a * tx + b * ty)], [c, d, -(c * tx + d * ty)]],
        })
    }

    fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform::new([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    }

    fn about_center(linear: [[f64; 2]; 2], cx: f64, cy: f64) -> Self {
        let l = AffineTransform::new([[linear[0][0], linear[0][1], 0.0], [linear[1][0], linear[1][1], 0.0]]);
        Self::translation(cx, cy)
            .then_after(&l)
            .then_after(&Self::translation(-cx, -cy))
    }

    /// Inverse warp that moves content right by `dx` and down by `dy` pixels.
    pub fn shift(dx: f64, dy: f64) -> Self {
        Self::translation(-dx, -dy)
    }

    /// Inverse warp that mirrors an image `width` pixels wide.
    pub fn hflip(width: usize) -> Self {
        AffineTransform::new([[-1.0, 0.0, (width as f64) - 1.0], [0.0, 1.0, 0.0]])
    }
}

/// Draws one transform for an image of `size = (height, width)`.
///
/// The content map is `flip ∘ shift ∘ shear ∘ zoom`, each about the image
/// center; the returned matrix is its inverse. The generator is advanced by
/// the same number of draws regardless of which ranges are zero.
pub fn sample_transform<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R, size: (usize, usize)) -> AffineTransform {
    let (h, w) = size;
    let zoom = rng.random_range(1.0 - config.zoom_range..=1.0 + config.zoom_range);
    let shear = rng.random_range(-config.shear_deg..=config.shear_deg).to_radians();
    let sx = rng.random_range(-config.shift_range..=config.shift_range);
    let sy = rng.random_range(-config.shift_range..=config.shift_range);
    let flip = rng.random_bool(0.5) && config.hflip;
    let (sx, sy) = match config.shift_axes {
        ShiftAxes::Both => (sx, sy),
        ShiftAxes::Horizontal => (sx, 0.0),
        ShiftAxes::Vertical => (0.0, sy),
    };

    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let zoom_map = AffineTransform::about_center([[zoom, 0.0], [0.0, zoom]], cx, cy);
    let shear_map = AffineTransform::about_center([[1.0, shear.tan()], [0.0, 1.0]], cx, cy);
    let shift_map = AffineTransform::translation(sx * w as f64, sy * h as f64);
    let flip_map = if flip {
        AffineTransform::hflip(w)
    } else {
        AffineTransform::IDENTITY
    };
    let content = flip_map
        .then_after(&shift_map)
        .then_after(&shear_map)
        .then_after(&zoom_map);
    content
        .inverse()
        .expect("zoom > 0 and |shear| < 90 deg keep the map invertible")
}

/// Warps `image` by bilinear sampling at `t · (x, y, 1)` for every output pixel.
pub fn apply_affine<T: Scalar>(image: &ArrayView3<'_, T>, t: &AffineTransform, fill: FillPolicy) -> Result<Image<T>> {
    let det = t.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularTransform(det));
    }
    let (h, w, c) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::EmptyDataset);
    }
    if t.is_identity() {
        return Ok(image.to_owned());
    }
    let mut out = Array3::zeros((h, w, c));
    let mut px = vec![T::zero(); c];
    let (lo, hi) = (T::zero(), T::one());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.apply(x as f64, y as f64);
            sample_bilinear(image, sx, sy, fill, &mut px);
            for (ch, v) in px.iter().enumerate() {
                out[[y, x, ch]] = v.max(lo).min(hi);
            }
        }
    }
    Ok(out)
}

/// One mini-batch in `N×H×W×3` layout.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub pixels: Array4<T>,
    pub targets: Array1<T>,
    pub labels: Vec<ClassLabel>,
    /// Positions of the samples in the source split.
    pub indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    fn assemble(split: &LoadedSplit<T>, indices: Vec<usize>, images: Vec<Image<T>>) -> Self {
        let (h, w, c) = images.first().map(|i| i.dim()).unwrap_or((0, 0, 0));
        let mut pixels = Array4::zeros((images.len(), h, w, c));
        for (i, img) in images.iter().enumerate() {
            pixels.slice_mut(s![i, .., .., ..]).assign(img);
        }
        let labels: Vec<ClassLabel> = indices.iter().map(|&i| split.labels[i]).collect();
        let targets = labels.iter().map(|l| T::of(f64::from(l.target()))).collect();
        Batch {
            pixels,
            targets,
            labels,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One epoch of shuffled, augmented training batches.
pub struct AugmentedBatches<'a, T, R: ?Sized> {
    split: &'a LoadedSplit<T>,
    config: &'a AugmentConfig,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: &'a mut R,
}

/// Shuffles `split` with `rng` and yields `⌈N / batch_size⌉` augmented batches.
pub fn augmented_batches<'a, T: Scalar, R: Rng + ?Sized>(
    split: &'a LoadedSplit<T>,
    config: &'a AugmentConfig,
    batch_size: usize,
    rng: &'a mut R,
) -> Result<AugmentedBatches<'a, T, R>> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    config.validate()?;
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(rng);
    Ok(AugmentedBatches {
        split,
        config,
        order,
        cursor: 0,
        batch_size,
        rng,
    })
}

impl<T: Scalar, R: Rng + ?Sized> AugmentedBatches<'_, T, R> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Scalar, R: Rng + ?Sized> Iterator for AugmentedBatches<'_, T, R> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        // transforms drawn sequentially, applied in parallel
        let transforms: Vec<AffineTransform> = indices
            .iter()
            .map(|&i| {
                let (h, w, _) = self.split.images[i].dim();
                sample_transform(self.config, &mut *self.rng, (h, w))
            })
            .collect();
        let fill = self.config.fill;
        let images: Vec<Image<T>> = indices
            .par_iter()
            .zip(transforms.par_iter())
            .map(|(&i, t)| {
                apply_affine(&self.split.images[i].view(), t, fill).expect("sampled transforms are invertible")
            })
            .collect();
        Some(Batch::assemble(self.split, indices, images))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.cursor).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

/// Sequential, unaugmented batches (used for validation).
pub fn plain_batches<T: Scalar>(split: &LoadedSplit<T>, batch_size: usize) -> impl Iterator<Item = Batch<T>> + '_ {
    let batch_size = batch_size.max(1);
    (0..split.len()).step_by(batch_size).map(move |start| {
        let indices: Vec<usize> = (start..(start + batch_size).min(split.len())).collect();
        let images = indices.iter().map(|&i| split.images[i].clone()).collect();
        Batch::assemble(split, indices, images)
    })
}
