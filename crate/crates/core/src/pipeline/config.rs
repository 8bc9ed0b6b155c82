use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::{ClassDirs, DatasetLayout, PixelRange};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::{BackboneSpec, HeadSpec, WeightsSource};
use crate::report::DiagnosisRule;
use crate::training::TrainConfig;

/// Colon-separated directories searched for relative weights archive paths.
pub const WEIGHTS_PATH_ENV: &str = "CTSCAN_WEIGHTS_PATH";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub pixel_range: PixelRange,
    pub class_dirs: ClassDirs,
    /// Train fraction for a pooled (unsplit) root.
    pub split_ratio: f64,
    pub split_seed: Option<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: PathBuf::from("data"),
            pixel_range: PixelRange::Unit,
            class_dirs: ClassDirs::default(),
            split_ratio: 0.8,
            split_seed: None,
        }
    }
}

impl DatasetSection {
    pub fn layout(&self) -> DatasetLayout {
        DatasetLayout {
            class_dirs: self.class_dirs.clone(),
            split_ratio: self.split_ratio,
            split_seed: self.split_seed.unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub threshold: f64,
    /// Defaults to the training batch size.
    pub batch_size: Option<usize>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            threshold: DEFAULT_THRESHOLD,
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub stride: usize,
    pub diagnosis: DiagnosisRule,
    /// Name of this run in comparison tables; defaults to the run id.
    pub model_name: Option<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            stride: 5,
            diagnosis: DiagnosisRule::default(),
            model_name: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Run directories (or their `run.json`) to include, in order.
    pub runs: Vec<PathBuf>,
    /// JSON files of ready-made comparison rows, appended after `runs`.
    pub fixtures: Vec<PathBuf>,
    /// Use the bundled reference table when nothing else is listed.
    pub reference_when_empty: Option<bool>,
}

/// The whole pipeline, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub run_id: String,
    pub precision: Precision,
    pub dataset: DatasetSection,
    pub augment: AugmentConfig,
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
    pub training: TrainConfig,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
    pub compare: CompareSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            run_id: "run".into(),
            precision: Precision::F32,
            dataset: DatasetSection::default(),
            augment: AugmentConfig::default(),
            backbone: BackboneSpec::default(),
            head: HeadSpec::default(),
            training: TrainConfig::default(),
            evaluate: EvaluateSection::default(),
            report: ReportSection::default(),
            compare: CompareSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.root);
        self.compare.runs.iter_mut().for_each(fix);
        self.compare.fixtures.iter_mut().for_each(fix);
    }

    /// Fills every unset sub-seed from the global seed.
    pub fn resolved(mut self) -> Self {
        let s = self.seed;
        self.dataset.split_seed.get_or_insert(s);
        self.augment.seed.get_or_insert(s);
        self.backbone.seed.get_or_insert(s);
        self.head.seed.get_or_insert(s);
        self.training.seed.get_or_insert(s);
        self
    }

    /// Checks every section; performed before any command does work.
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id == "." || self.run_id == ".." {
            return Err(Error::InvalidConfig(format!(
                "run_id `{}` is not a plain directory name",
                self.run_id
            )));
        }
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dataset: split_ratio {} must lie in (0, 1)",
                self.dataset.split_ratio
            )));
        }
        if self.dataset.class_dirs.positive == self.dataset.class_dirs.negative {
            return Err(Error::InvalidConfig("dataset: class directories must differ".into()));
        }
        self.augment.validate()?;
        self.backbone.validate()?;
        self.head.validate()?;
        self.training.validate()?;
        if !(self.evaluate.threshold > 0.0 && self.evaluate.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "evaluate: threshold {} must lie in (0, 1)",
                self.evaluate.threshold
            )));
        }
        if self.evaluate.batch_size == Some(0) {
            return Err(Error::InvalidConfig("evaluate: batch_size must be at least 1".into()));
        }
        if self.report.stride == 0 {
            return Err(Error::InvalidConfig("report: stride must be at least 1".into()));
        }
        self.report.diagnosis.validate()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn model_name(&self) -> &str {
        self.report.model_name.as_deref().unwrap_or(&self.run_id)
    }

    pub fn eval_batch_size(&self) -> usize {
        self.evaluate.batch_size.unwrap_or(self.training.batch_size)
    }

    /// The backbone spec with a relative archive path looked up in
    /// [`WEIGHTS_PATH_ENV`] when it does not exist as given.
    pub fn backbone_with_weights(&self) -> Result<BackboneSpec> {
        let mut spec = self.backbone.clone();
        if let WeightsSource::Archive(p) = &spec.weights {
            spec.weights = WeightsSource::Archive(locate_weights(p, std::env::var_os(WEIGHTS_PATH_ENV))?);
        }
        Ok(spec)
    }
}

fn locate_weights(path: &Path, search: Option<std::ffi::OsString>) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dirs) = search {
            for dir in std::env::split_paths(&dirs) {
                let candidate = dir.join(path);
                if candidate.exists() {
                    return Ok(candidate);
                }
            }
        }
    }
    Err(Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, "weights archive not found"),
    ))
}
