//! Config-driven orchestration: scan → train → evaluate → report → compare.
//!
//! Every command writes under `<output_dir>/<run_id>/`.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    CompareSection, DatasetSection, EvaluateSection, PipelineConfig, Precision, ReportSection, WEIGHTS_PATH_ENV,
};

use crate::dataset::{scan_dataset, ClassCounts, DatasetManifest, LayoutKind, LoadedSplit, ScanWarning, Split};
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::metrics::{ConfusionCounts, UndefinedFlags};
use crate::model::{build_classifier, weights, ClassifierModel, ModelSummary};
use crate::report::{
    diagnose, reference_comparison, render_comparison, render_curves, render_epoch_tables, ComparisonRow,
    OverfitDiagnosis,
};
use crate::training::{
    batches_to_csv, epochs_from_csv, epochs_to_csv, evaluate, train, EpochRecord, StopReason, TrainingData,
};
use crate::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const BATCHES_FILE: &str = "batches.csv";
pub const RUN_FILE: &str = "run.json";
pub const HEAD_FILE: &str = "head.ctw";
pub const MODEL_FILE: &str = "model.json";
pub const TABLES_FILE: &str = "tables.txt";
pub const DIAGNOSIS_FILE: &str = "diagnosis.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const COMPARISON_TEXT_FILE: &str = "comparison.txt";
pub const COMPARISON_JSON_FILE: &str = "comparison.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Scan,
    Train,
    Evaluate,
    Report,
    Compare,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Scan,
        Command::Train,
        Command::Evaluate,
        Command::Report,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Scan => "scan",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::Compare => "compare",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown command `{s}`")))
    }
}

/// What a command produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub command: Command,
    pub run_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    /// Human-readable result for the terminal.
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: crate::dataset::ClassLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub root: PathBuf,
    pub layout: LayoutKind,
    pub counts: serde_json::Value,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub warnings: Vec<ScanWarning>,
}

impl ManifestFile {
    fn new(root: &Path, m: &DatasetManifest) -> Self {
        let entries = |split: Split| {
            m.samples(split)
                .iter()
                .map(|s| ManifestEntry {
                    path: s.path.strip_prefix(root).unwrap_or(&s.path).to_path_buf(),
                    label: s.label,
                })
                .collect()
        };
        ManifestFile {
            root: root.to_path_buf(),
            layout: m.layout,
            counts: m.counts_json(),
            train: entries(Split::Train),
            val: entries(Split::Val),
            warnings: m.warnings.clone(),
        }
    }
}

/// `run.json`: the training outcome with the full config snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub run_id: String,
    pub model_name: String,
    pub seed: u64,
    pub stop_reason: StopReason,
    pub epochs: usize,
    pub total_seconds: f64,
    pub final_epoch: EpochRecord,
    pub config: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelFile {
    pub summary: ModelSummary,
    /// Tensors stored in the head archive.
    pub head_archive: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub split: String,
    pub samples: usize,
    pub threshold: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisFile {
    pub model_name: String,
    pub diagnosis: OverfitDiagnosis,
}

/// Runs one command. The config is seed-resolved and validated first; no
/// file is written if validation or dataset discovery fails.
pub fn run_pipeline(config: &PipelineConfig, command: Command) -> Result<Outcome> {
    let config = config.clone().resolved();
    config.validate()?;
    match command {
        Command::Scan => scan(&config),
        Command::Train => match config.precision {
            Precision::F32 => train_run::<f32>(&config),
            Precision::F64 => train_run::<f64>(&config),
        },
        Command::Evaluate => match config.precision {
            Precision::F32 => evaluate_run::<f32>(&config),
            Precision::F64 => evaluate_run::<f64>(&config),
        },
        Command::Report => report(&config),
        Command::Compare => compare(&config),
    }
}

fn counts_line(name: &str, c: &ClassCounts) -> String {
    format!("{name}: {} positive, {} negative", c.positive, c.negative)
}

fn scan(config: &PipelineConfig) -> Result<Outcome> {
    let root = &config.dataset.root;
    let manifest = scan_dataset(root, &config.dataset.layout())?;
    let run_dir = config.run_dir();
    let path = run_dir.join(MANIFEST_FILE);
    write_json(&path, &ManifestFile::new(root, &manifest))?;
    let mut summary = vec![
        counts_line("train", &manifest.counts(Split::Train)),
        counts_line("val", &manifest.counts(Split::Val)),
    ];
    for w in &manifest.warnings {
        summary.push(format!("skipped {}: {}", w.path.display(), w.reason));
    }
    Ok(Outcome {
        command: Command::Scan,
        run_dir,
        artifacts: vec![path],
        summary: summary.join("\n"),
    })
}

fn build_model<T: Scalar>(config: &PipelineConfig) -> Result<ClassifierModel<T>> {
    build_classifier(&config.backbone_with_weights()?, &config.head, config.seed)
}

fn train_run<T: Scalar>(config: &PipelineConfig) -> Result<Outcome> {
    let root = &config.dataset.root;
    let manifest = scan_dataset(root, &config.dataset.layout())?;
    let mut model = build_model::<T>(config)?;
    let data = TrainingData::<T>::load(&manifest, config.backbone.input_hw(), config.dataset.pixel_range)?;
    let run_dir = config.run_dir();

    let run = match train(&mut model, &data, &config.augment, &config.training) {
        Ok(run) => run,
        Err(Error::NonFiniteLoss { epoch, records }) => {
            // keep the completed epochs on disk before reporting the failure
            write_atomic(&run_dir.join(EPOCHS_FILE), &epochs_to_csv(&records)?)?;
            return Err(Error::NonFiniteLoss { epoch, records });
        }
        Err(e) => return Err(e),
    };

    let last = run.records.last().cloned().unwrap_or_default();
    let paths = [
        MANIFEST_FILE,
        EPOCHS_FILE,
        BATCHES_FILE,
        RUN_FILE,
        HEAD_FILE,
        MODEL_FILE,
    ]
    .map(|f| run_dir.join(f));
    write_json(&paths[0], &ManifestFile::new(root, &manifest))?;
    write_atomic(&paths[1], &epochs_to_csv(&run.records)?)?;
    write_atomic(&paths[2], &batches_to_csv(&run.batch_log)?)?;
    write_json(
        &paths[3],
        &RunFile {
            run_id: config.run_id.clone(),
            model_name: config.model_name().into(),
            seed: config.seed,
            stop_reason: run.stop_reason,
            epochs: run.records.len(),
            total_seconds: run.total_seconds,
            final_epoch: last.clone(),
            config: config.clone(),
        },
    )?;
    let archive = model.head_archive();
    weights::write_archive(&paths[4], &archive)?;
    write_json(
        &paths[5],
        &ModelFile {
            summary: model.summary(),
            head_archive: HEAD_FILE.into(),
        },
    )?;
    let summary = format!(
        "{} epochs, stopped by {}; final train loss {:.4}, val loss {:.4}, val accuracy {:.2}%",
        run.records.len(),
        run.stop_reason,
        last.train_loss,
        last.val_loss,
        last.val_accuracy * 100.0
    );
    Ok(Outcome {
        command: Command::Train,
        run_dir,
        artifacts: paths.to_vec(),
        summary,
    })
}

fn evaluate_run<T: Scalar>(config: &PipelineConfig) -> Result<Outcome> {
    let run_dir = config.run_dir();
    let head_path = run_dir.join(HEAD_FILE);
    let manifest = scan_dataset(&config.dataset.root, &config.dataset.layout())?;
    let archive = weights::read_archive(&head_path)?;
    let mut model = build_model::<T>(config)?;
    model.load_head_archive(&archive)?;
    let val = LoadedSplit::<T>::load(manifest.samples(Split::Val), config.backbone.input_hw())?;
    let e = evaluate(
        &model,
        &val,
        config.eval_batch_size(),
        config.evaluate.threshold,
        config.dataset.pixel_range,
    )?;
    let file = EvaluationFile {
        split: Split::Val.dir_name().into(),
        samples: e.samples,
        threshold: e.threshold,
        loss: e.loss,
        accuracy: e.metrics.accuracy,
        precision: e.metrics.precision,
        recall: e.metrics.recall,
        f1: e.metrics.f1,
        undefined: e.metrics.undefined,
        counts: e.counts,
    };
    let path = run_dir.join(EVALUATION_FILE);
    write_json(&path, &file)?;
    let summary = format!(
        "val loss {:.4}, accuracy {:.2}%, precision {:.4}, recall {:.4}, F1 {:.4}",
        file.loss,
        file.accuracy * 100.0,
        file.precision,
        file.recall,
        file.f1
    );
    Ok(Outcome {
        command: Command::Evaluate,
        run_dir,
        artifacts: vec![path],
        summary,
    })
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    epochs_from_csv(&bytes).map_err(|e| match e {
        Error::Parse { reason, .. } => Error::Parse {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

fn report(config: &PipelineConfig) -> Result<Outcome> {
    let run_dir = config.run_dir();
    let records = read_epochs(&run_dir.join(EPOCHS_FILE))?;
    if records.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let tables = render_epoch_tables(&records, config.report.stride);
    let diagnosis = (records.len() >= 2)
        .then(|| diagnose(&records, &config.report.diagnosis))
        .transpose()?;

    let tables_path = run_dir.join(TABLES_FILE);
    let mut text = tables.clone();
    if let Some(d) = &diagnosis {
        text.push_str(&format!("\nTraining comment: {}\n* {}\n", d.comment, d.footnote));
    }
    write_atomic(&tables_path, text.as_bytes())?;
    let curves = render_curves(&records, &run_dir)?;
    let mut artifacts = vec![
        tables_path,
        curves.loss_png,
        curves.loss_csv,
        curves.accuracy_png,
        curves.accuracy_csv,
    ];
    if let Some(d) = &diagnosis {
        let path = run_dir.join(DIAGNOSIS_FILE);
        write_json(
            &path,
            &DiagnosisFile {
                model_name: config.model_name().into(),
                diagnosis: d.clone(),
            },
        )?;
        artifacts.push(path);
    }
    Ok(Outcome {
        command: Command::Report,
        run_dir,
        artifacts,
        summary: text,
    })
}

/// Comparison row for a finished run directory (or its `run.json`).
pub fn row_from_run(path: &Path, fallback: &PipelineConfig) -> Result<ComparisonRow> {
    let (dir, run_json) = if path.is_dir() {
        (path.to_path_buf(), path.join(RUN_FILE))
    } else {
        (path.parent().unwrap_or(Path::new("")).to_path_buf(), path.to_path_buf())
    };
    let run: RunFile = read_json(&run_json)?;
    let records = read_epochs(&dir.join(EPOCHS_FILE))?;
    let rule = if run.config.report.diagnosis.validate().is_ok() {
        run.config.report.diagnosis
    } else {
        fallback.report.diagnosis
    };
    ComparisonRow::from_run(run.model_name, &records, &rule)
}

fn compare(config: &PipelineConfig) -> Result<Outcome> {
    let mut rows = Vec::new();
    for run in &config.compare.runs {
        rows.push(row_from_run(run, config)?);
    }
    for f in &config.compare.fixtures {
        let fixture: Vec<ComparisonRow> = read_json(f)?;
        rows.extend(fixture);
    }
    if rows.is_empty() {
        if config.compare.reference_when_empty == Some(false) {
            return Err(Error::InvalidConfig("compare: no runs or fixtures listed".into()));
        }
        rows = reference_comparison();
    }
    for r in &rows {
        r.validate()?;
    }
    let run_dir = config.run_dir();
    let text = render_comparison(&rows);
    let text_path = run_dir.join(COMPARISON_TEXT_FILE);
    let json_path = run_dir.join(COMPARISON_JSON_FILE);
    write_atomic(&text_path, text.as_bytes())?;
    write_json(&json_path, &rows)?;
    Ok(Outcome {
        command: Command::Compare,
        run_dir,
        artifacts: vec![text_path, json_path],
        summary: text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("fit".parse::<Command>().is_err());
    }

    #[test]
    fn missing_dataset_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            output_dir: dir.path().join("out"),
            dataset: DatasetSection {
                root: dir.path().join("absent"),
                ..Default::default()
            },
            ..Default::default()
        };
        for c in [Command::Scan, Command::Train] {
            let err = run_pipeline(&cfg, c).unwrap_err();
            assert_eq!(err.family().exit_code(), 3);
        }
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn compare_defaults_to_the_reference_table() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let out = run_pipeline(&cfg, Command::Compare).unwrap();
        assert!(out.summary.contains("| 84%"));
        let rows: Vec<ComparisonRow> = read_json(&out.artifacts[1]).unwrap();
        assert_eq!(rows.len(), 9);
    }
}
