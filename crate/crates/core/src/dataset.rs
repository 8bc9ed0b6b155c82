//! Discovery, loading and splitting of the two-class image corpus.
//!
//! Two directory layouts are understood:
//!
//! ```text
//! root/train/COVID/*.png      root/COVID/*.png
//! root/train/non-COVID/*.png  root/non-COVID/*.png
//! root/val/COVID/*.png
//! root/val/non-COVID/*.png
//! ```
//!
//! The left one is used as-is. The right one is a single pool that is split
//! per class with [`hold_out_split`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Image};
use crate::Scalar;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    CovidPositive,
    CovidNegative,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::CovidPositive, ClassLabel::CovidNegative];

    /// Numeric training target: positive is 1 so the sigmoid output reads as
    /// the probability of infection.
    pub fn target(self) -> u8 {
        match self {
            ClassLabel::CovidPositive => 1,
            ClassLabel::CovidNegative => 0,
        }
    }

    pub fn from_target(target: u8) -> Option<Self> {
        match target {
            1 => Some(ClassLabel::CovidPositive),
            0 => Some(ClassLabel::CovidNegative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == ClassLabel::CovidPositive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Explicit directory-name to label mapping. Never inferred from sort order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassDirs {
    pub positive: String,
    pub negative: String,
}

impl Default for ClassDirs {
    fn default() -> Self {
        ClassDirs {
            positive: "COVID".into(),
            negative: "non-COVID".into(),
        }
    }
}

impl ClassDirs {
    pub fn dir_for(&self, label: ClassLabel) -> &str {
        match label {
            ClassLabel::CovidPositive => &self.positive,
            ClassLabel::CovidNegative => &self.negative,
        }
    }
}

/// How [`scan_dataset`] interprets a root directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetLayout {
    pub class_dirs: ClassDirs,
    /// Train fraction when the root is a single unsplit pool.
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        DatasetLayout {
            class_dirs: ClassDirs::default(),
            split_ratio: 0.8,
            split_seed: 0,
        }
    }
}

/// Final value mapping applied to `[0, 1]` pixels before they reach the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelRange {
    #[default]
    Unit,
    Symmetric,
}

impl PixelRange {
    pub fn apply<T: Scalar, D: ndarray::Dimension>(self, pixels: &mut ndarray::Array<T, D>) {
        if self == PixelRange::Symmetric {
            let two = T::of(2.0);
            pixels.mapv_inplace(|p| p * two - T::one());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageSample {
    pub path: PathBuf,
    pub label: ClassLabel,
}

impl ImageSample {
    pub fn load<T: Scalar>(&self, size: (usize, usize)) -> Result<Image<T>> {
        load_image(&self.path, size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    PreSplit,
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

impl ClassCounts {
    pub fn of(samples: &[ImageSample]) -> Self {
        let positive = samples.iter().filter(|s| s.label.is_positive()).count();
        ClassCounts {
            positive,
            negative: samples.len() - positive,
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub warnings: Vec<ScanWarning>,
    pub layout: LayoutKind,
    pub class_dirs: ClassDirs,
}

impl DatasetManifest {
    pub fn samples(&self, split: Split) -> &[ImageSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn counts(&self, split: Split) -> ClassCounts {
        ClassCounts::of(self.samples(split))
    }

    /// `{split: {class_dir: count}}`, keyed by the configured directory names.
    pub fn counts_json(&self) -> serde_json::Value {
        let mut root = BTreeMap::new();
        for split in [Split::Train, Split::Val] {
            let c = self.counts(split);
            let mut per_class = BTreeMap::new();
            per_class.insert(self.class_dirs.positive.clone(), c.positive);
            per_class.insert(self.class_dirs.negative.clone(), c.negative);
            root.insert(split.dir_name(), per_class);
        }
        serde_json::to_value(root).expect("string-keyed map serializes")
    }
}

/// Enumerates a dataset root, checking every candidate file's header.
///
/// Unreadable files are reported in `warnings` and left out of the manifest.
/// Samples in each split are ordered lexicographically by path.
pub fn scan_dataset(root: &Path, layout: &DatasetLayout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingDataset(root.to_path_buf()));
    }
    let mut warnings = Vec::new();
    let pre_split = root.join(Split::Train.dir_name()).exists() || root.join(Split::Val.dir_name()).exists();

    let (mut train, mut val, kind) = if pre_split {
        let mut splits = Vec::with_capacity(2);
        for split in [Split::Train, Split::Val] {
            let dir = root.join(split.dir_name());
            if !dir.is_dir() {
                return Err(Error::MissingClassDirectory {
                    split: split.dir_name().into(),
                    path: dir,
                });
            }
            splits.push(scan_classes(&dir, split.dir_name(), &layout.class_dirs, &mut warnings)?);
        }
        let val = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        (train, val, LayoutKind::PreSplit)
    } else {
        let pool = scan_classes(root, "pool", &layout.class_dirs, &mut warnings)?;
        let (train, val) = hold_out_split(&pool, layout.split_ratio, layout.split_seed)?;
        (train, val, LayoutKind::Pooled)
    };
    train.sort();
    val.sort();
    Ok(DatasetManifest {
        train,
        val,
        warnings,
        layout: kind,
        class_dirs: layout.class_dirs.clone(),
    })
}

fn scan_classes(
    dir: &Path,
    split: &str,
    class_dirs: &ClassDirs,
    warnings: &mut Vec<ScanWarning>,
) -> Result<Vec<ImageSample>> {
    let mut samples = Vec::new();
    for label in ClassLabel::ALL {
        let class_dir = dir.join(class_dirs.dir_for(label));
        if !class_dir.is_dir() {
            return Err(Error::MissingClassDirectory {
                split: split.into(),
                path: class_dir,
            });
        }
        let mut files = Vec::new();
        for entry in fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))? {
            let path = entry.map_err(|e| Error::io(&class_dir, e))?.path();
            if path.is_file() && has_image_extension(&path) {
                files.push(path);
            }
        }
        files.sort();
        let checked: Vec<(PathBuf, std::result::Result<(), String>)> = files
            .into_par_iter()
            .map(|p| {
                let r = probe_header(&p);
                (p, r)
            })
            .collect();
        let before = samples.len();
        for (path, readable) in checked {
            match readable {
                Ok(()) => samples.push(ImageSample { path, label }),
                Err(reason) => warnings.push(ScanWarning { path, reason }),
            }
        }
        if samples.len() == before {
            return Err(Error::EmptyClass { path: class_dir });
        }
    }
    Ok(samples)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn probe_header(path: &Path) -> std::result::Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Decodes an image, replicates grayscale to three channels, scales by 1/255
/// and bilinearly resizes to `size = (height, width)`.
pub fn load_image<T: Scalar>(path: &Path, size: (usize, usize)) -> Result<Image<T>> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!("target size {h}x{w} must be positive")));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (sw, sh) = rgb.dimensions();
    let scale = T::of(1.0 / 255.0);
    let raw = Array3::from_shape_fn((sh as usize, sw as usize, 3), |(y, x, c)| {
        T::of(f64::from(rgb.get_pixel(x as u32, y as u32)[c])) * scale
    });
    Ok(resize_bilinear(&raw.view(), h, w))
}

/// Stratified, seeded train/validation split.
///
/// Each class is shuffled independently and `round(n * ratio)` of its samples
/// go to training. The result depends only on the set of samples, not their
/// order in `pool`.
pub fn hold_out_split(pool: &[ImageSample], ratio: f64, seed: u64) -> Result<(Vec<ImageSample>, Vec<ImageSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in ClassLabel::ALL {
        let mut class: Vec<ImageSample> = pool.iter().filter(|s| s.label == label).cloned().collect();
        class.sort();
        class.shuffle(&mut rng);
        let n_train = (class.len() as f64 * ratio).round() as usize;
        let n_val = class.len() - n_train;
        if n_train == 0 || n_val == 0 {
            return Err(Error::DegenerateSplit {
                class: format!("{label:?}"),
                ratio,
                train: n_train,
                val: n_val,
            });
        }
        val.extend(class.split_off(n_train));
        train.extend(class);
    }
    train.sort();
    val.sort();
    Ok((train, val))
}

/// A split decoded into memory, in manifest order.
#[derive(Clone, Debug)]
pub struct LoadedSplit<T> {
    pub images: Vec<Image<T>>,
    pub labels: Vec<ClassLabel>,
    pub paths: Vec<PathBuf>,
}

impl<T: Scalar> LoadedSplit<T> {
    pub fn load(samples: &[ImageSample], size: (usize, usize)) -> Result<Self> {
        let images = samples
            .par_iter()
            .map(|s| s.load::<T>(size))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedSplit {
            images,
            labels: samples.iter().map(|s| s.label).collect(),
            paths: samples.iter().map(|s| s.path.clone()).collect(),
        })
    }

    pub fn from_parts(images: Vec<Image<T>>, labels: Vec<ClassLabel>) -> Self {
        let paths = (0..images.len()).map(|i| PathBuf::from(format!("#{i}"))).collect();
        LoadedSplit { images, labels, paths }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
