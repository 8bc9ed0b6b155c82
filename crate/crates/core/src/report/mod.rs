//! Epoch tables, training curves, convergence/overfitting diagnosis and the
//! multi-model comparison table.

mod curves;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use curves::{render_curves, CurveFiles, ACCURACY_CURVE, LOSS_CURVE};

use crate::error::{Error, Result};
use crate::training::{epochs_from_csv, EpochRecord};

/// Comparison rows of the bundled reference benchmark table.
pub const REFERENCE_COMPARISON_JSON: &str = include_str!("../../fixtures/comparison_table3.json");

/// The sampled epochs of the bundled reference run.
pub const REFERENCE_EPOCHS_CSV: &str = include_str!("../../fixtures/reference_epochs.csv");

pub fn reference_comparison() -> Vec<ComparisonRow> {
    serde_json::from_str(REFERENCE_COMPARISON_JSON).expect("bundled comparison fixture parses")
}

pub fn reference_epochs() -> Vec<EpochRecord> {
    epochs_from_csv(REFERENCE_EPOCHS_CSV.as_bytes()).expect("bundled epoch fixture parses")
}

/// Constants of the diagnosis rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisRule {
    /// Consecutive epochs that must all show the overfitting pattern.
    pub window: usize,
    /// Converged when final train loss < `convergence_ratio` × first train loss.
    pub convergence_ratio: f64,
}

impl Default for DiagnosisRule {
    fn default() -> Self {
        DiagnosisRule {
            window: 3,
            convergence_ratio: 0.5,
        }
    }
}

impl DiagnosisRule {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("report: window must be at least 1".into()));
        }
        if !(self.convergence_ratio > 0.0 && self.convergence_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "report: convergence_ratio must lie in (0, 1], got {}",
                self.convergence_ratio
            )));
        }
        Ok(())
    }

    pub fn footnote(&self) -> String {
        format!(
            "Converged: final training loss below {} x the first epoch's. Overfitting onset: first epoch \
             opening {} consecutive logged epochs whose validation loss all exceed the best earlier value, \
             with training loss falling and validation loss rising across the window.",
            self.convergence_ratio, self.window
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitDiagnosis {
    pub converged: bool,
    pub overfit_onset_epoch: Option<usize>,
    pub total_epochs: usize,
    pub comment: String,
    pub footnote: String,
}

/// Comment text; a function of the two verdicts and the epoch count only.
pub fn diagnosis_comment(converged: bool, onset: Option<usize>, total_epochs: usize) -> String {
    let head = if converged { "Converged." } else { "Did not converge." };
    let tail = match onset {
        Some(e) => format!("Overfitting evident after {}.", epochs(e.saturating_sub(1))),
        None => format!("Overfitting not evident after {}.", epochs(total_epochs)),
    };
    format!("{head} {tail}")
}

fn epochs(n: usize) -> String {
    if n == 1 {
        "1 epoch".into()
    } else {
        format!("{n} epochs")
    }
}

/// Classifies a logged run.
///
/// Records are taken in order and need not be contiguous epochs; windows
/// count logged rows and the onset is reported by its epoch number.
pub fn diagnose(records: &[EpochRecord], rule: &DiagnosisRule) -> Result<OverfitDiagnosis> {
    rule.validate()?;
    if records.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: records.len(),
        });
    }
    let first = &records[0];
    let last = &records[records.len() - 1];
    let converged = last.train_loss < rule.convergence_ratio * first.train_loss;
    let k = rule.window;
    let onset = (1..records.len())
        .filter(|&s| s + k <= records.len())
        .find(|&s| {
            let best = records[..s].iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
            let w = &records[s..s + k];
            w.iter().all(|r| r.val_loss > best)
                && w[k - 1].train_loss < w[0].train_loss
                && w[k - 1].val_loss > w[0].val_loss
        })
        .map(|s| records[s].epoch);
    Ok(OverfitDiagnosis {
        converged,
        overfit_onset_epoch: onset,
        total_epochs: last.epoch,
        comment: diagnosis_comment(converged, onset, last.epoch),
        footnote: rule.footnote(),
    })
}

/// Half-up rounding to `decimals` places, tolerant of binary representation
/// error just below a tie.
pub fn fixed(value: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value * scale;
    let rounded = (scaled.abs() + 0.5 + 1e-9).floor().copysign(scaled) / scale;
    format!("{:.*}", decimals, rounded + 0.0)
}

pub fn percent(rate: f64, decimals: usize) -> String {
    format!("{}%", fixed(rate * 100.0, decimals))
}

/// Epochs shown in the tables: 1, 1 + stride, … and always the last.
fn sampled(records: &[EpochRecord], stride: usize) -> Vec<&EpochRecord> {
    let stride = stride.max(1);
    let last = records.last().map(|r| r.epoch);
    records
        .iter()
        .filter(|r| r.epoch >= 1 && ((r.epoch - 1) % stride == 0 || Some(r.epoch) == last))
        .collect()
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Reads one metric from an epoch record.
type Field = fn(&EpochRecord) -> f64;

/// Loss & accuracy table followed by the transposed precision & recall table.
pub fn render_epoch_tables(records: &[EpochRecord], stride: usize) -> String {
    let rows = sampled(records, stride);
    let label = |r: &EpochRecord| format!("After Epoch {}", r.epoch);

    let mut t1 = vec![vec![
        "Epoch".to_string(),
        "Training Loss".into(),
        "Validation Loss".into(),
        "Training Accuracy".into(),
        "Validation Accuracy".into(),
    ]];
    for r in &rows {
        t1.push(vec![
            label(r),
            fixed(r.train_loss, 4),
            fixed(r.val_loss, 4),
            percent(r.train_accuracy, 2),
            percent(r.val_accuracy, 2),
        ]);
    }

    let mut t2 = vec![std::iter::once("Factor".to_string())
        .chain(rows.iter().map(|r| label(r)))
        .collect::<Vec<_>>()];
    let series: [(&str, Field); 4] = [
        ("Training Precision", |r| r.train_precision),
        ("Validation Precision", |r| r.val_precision),
        ("Training Recall", |r| r.train_recall),
        ("Validation Recall", |r| r.val_recall),
    ];
    for (name, get) in series {
        t2.push(
            std::iter::once(name.to_string())
                .chain(rows.iter().map(|r| fixed(get(r), 4)))
                .collect(),
        );
    }

    let mut out = String::new();
    let _ = writeln!(out, "Table I. Loss & Accuracy");
    out.push_str(&table(&t1));
    let _ = writeln!(out);
    let _ = writeln!(out, "Table II. Precision & Recall");
    out.push_str(&table(&t2));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub final_val_accuracy: f64,
    /// Rendered training comment. For rows built from a logged run this is
    /// the diagnosis comment; quoted rows carry their original wording.
    pub comment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<OverfitDiagnosis>,
}

impl ComparisonRow {
    pub fn from_run(model_name: impl Into<String>, records: &[EpochRecord], rule: &DiagnosisRule) -> Result<Self> {
        let diagnosis = diagnose(records, rule)?;
        Ok(ComparisonRow {
            model_name: model_name.into(),
            final_val_accuracy: records.last().map_or(0.0, |r| r.val_accuracy),
            comment: diagnosis.comment.clone(),
            diagnosis: Some(diagnosis),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.final_val_accuracy) {
            return Err(Error::InvalidConfig(format!(
                "comparison row {}: accuracy {} outside [0, 1]",
                self.model_name, self.final_val_accuracy
            )));
        }
        Ok(())
    }
}

/// `Model | Accuracy | Training Comment`, rows in the given order, accuracy
/// as a whole percent.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut t = vec![vec!["Model".to_string(), "Accuracy".into(), "Training Comment".into()]];
    for r in rows {
        t.push(vec![
            r.model_name.clone(),
            percent(r.final_val_accuracy, 0),
            r.comment.clone(),
        ]);
    }
    let mut out = String::from("Table III. Comparing Model Performance\n");
    out.push_str(&table(&t));
    let footnotes: Vec<&str> = rows
        .iter()
        .filter_map(|r| r.diagnosis.as_ref().map(|d| d.footnote.as_str()))
        .collect();
    if let Some(note) = footnotes.first() {
        let _ = writeln!(out);
        let _ = writeln!(out, "* {note}");
    }
    out
}
