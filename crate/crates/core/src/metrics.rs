//! Confusion counts, precision/recall/accuracy and F1 for thresholded
//! binary predictions.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Default decision threshold. Probabilities equal to it count as positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.true_pos += rhs.true_pos;
        self.false_pos += rhs.false_pos;
        self.false_neg += rhs.false_neg;
        self.true_neg += rhs.true_neg;
    }
}

/// Set when a metric's denominator was zero and its value was reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
}

/// Tallies predictions (`p >= threshold` is positive) against 0/1 targets.
pub fn confusion_counts<T: Scalar>(p: &[T], y: &[T], threshold: f64) -> Result<ConfusionCounts> {
    if p.len() != y.len() {
        return Err(Error::shape("confusion counts", p.len(), y.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let threshold = T::of(threshold);
    let half = T::of(0.5);
    let mut c = ConfusionCounts::default();
    for (&p, &y) in p.iter().zip(y) {
        match (p >= threshold, y >= half) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Precision, recall, accuracy and the F1 derived from them.
pub fn rates(c: &ConfusionCounts) -> Result<MetricValues> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let ratio = |num: u64, den: u64| -> (f64, bool) {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, p_undef) = ratio(c.true_pos, c.true_pos + c.false_pos);
    let (recall, r_undef) = ratio(c.true_pos, c.true_pos + c.false_neg);
    let accuracy = (c.true_pos + c.true_neg) as f64 / total as f64;
    let f1 = try_f1_score(precision, recall);
    Ok(MetricValues {
        precision,
        recall,
        accuracy,
        f1: f1.unwrap_or(0.0),
        undefined: UndefinedFlags {
            precision: p_undef,
            recall: r_undef,
            f1: f1.is_none(),
        },
    })
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn try_f1_score(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum != 0.0).then(|| 2.0 * precision * recall / sum)
}

/// `2PR / (P + R)`, reported as 0 when `P + R = 0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    try_f1_score(precision, recall).unwrap_or(0.0)
}
