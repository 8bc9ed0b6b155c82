use serde::{Deserialize, Serialize};

use super::EpochRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    Threshold,
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Threshold => "THRESHOLD",
            StopReason::Patience => "PATIENCE",
            StopReason::MaxEpochs => "MAX_EPOCHS",
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Stop when training accuracy reaches a threshold, or when validation loss
/// has stalled for `patience` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub train_accuracy_threshold: f64,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            train_accuracy_threshold: 0.91,
            patience: 10,
            min_delta: 0.0,
        }
    }
}

impl StopRule {
    /// A threshold of zero is allowed and fires after the first epoch.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train_accuracy_threshold) {
            return Err(Error::InvalidConfig(format!(
                "stop: train_accuracy_threshold {} must lie in [0, 1]",
                self.train_accuracy_threshold
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("stop: patience must be at least 1".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig("stop: min_delta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Pure stopping decision over the history so far.
///
/// An epoch improves on validation loss when it is lower than the best
/// earlier value by more than `min_delta`; the first epoch always counts.
/// An empty history continues.
pub fn early_stop_check(history: &[EpochRecord], rule: &StopRule) -> StopDecision {
    let Some(latest) = history.last() else {
        return StopDecision::Continue;
    };
    if latest.train_accuracy >= rule.train_accuracy_threshold {
        return StopDecision::Stop(StopReason::Threshold);
    }
    let mut best = f64::INFINITY;
    let mut since_improvement = 0;
    for r in history {
        if r.val_loss < best - rule.min_delta {
            best = r.val_loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
    }
    if since_improvement >= rule.patience {
        StopDecision::Stop(StopReason::Patience)
    } else {
        StopDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_matches_the_serialized_name() {
        for r in [StopReason::Threshold, StopReason::Patience, StopReason::MaxEpochs] {
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
        }
    }
    use proptest::prelude::*;

    fn rec(epoch: usize, train_accuracy: f64, val_loss: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_accuracy,
            val_loss,
            ..Default::default()
        }
    }

    fn series(train_acc: f64, val: &[f64]) -> Vec<EpochRecord> {
        val.iter().enumerate().map(|(i, &v)| rec(i + 1, train_acc, v)).collect()
    }

    #[test]
    fn improving_loss_continues() {
        let h = series(0.6, &[0.9, 0.8, 0.7, 0.6]);
        assert_eq!(early_stop_check(&h, &StopRule::default()), StopDecision::Continue);
    }

    #[test]
    fn reference_stop_on_accuracy() {
        let mut h = series(0.8, &[0.6, 0.5]);
        h.push(rec(3, 0.9140, 0.4432));
        assert_eq!(
            early_stop_check(&h, &StopRule::default()),
            StopDecision::Stop(StopReason::Threshold)
        );
        h.last_mut().unwrap().train_accuracy = 0.9099;
        assert_eq!(early_stop_check(&h, &StopRule::default()), StopDecision::Continue);
    }

    #[test]
    fn zero_threshold_stops_immediately() {
        let rule = StopRule {
            train_accuracy_threshold: 0.0,
            ..Default::default()
        };
        assert_eq!(
            early_stop_check(&series(0.0, &[1.0]), &rule),
            StopDecision::Stop(StopReason::Threshold)
        );
    }

    #[test]
    fn patience_boundary() {
        let rule = StopRule {
            patience: 3,
            ..Default::default()
        };
        // best at epoch 1, then flat for exactly `patience` epochs
        let flat = series(0.5, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(early_stop_check(&flat, &rule), StopDecision::Stop(StopReason::Patience));
        assert_eq!(early_stop_check(&flat[..3], &rule), StopDecision::Continue);
    }

    #[test]
    fn min_delta_requires_real_improvement() {
        let rule = StopRule {
            patience: 2,
            min_delta: 0.01,
            ..Default::default()
        };
        let h = series(0.5, &[1.0, 0.995, 0.992]);
        assert_eq!(early_stop_check(&h, &rule), StopDecision::Stop(StopReason::Patience));
        let h = series(0.5, &[1.0, 0.98, 0.975]);
        assert_eq!(early_stop_check(&h, &rule), StopDecision::Continue);
    }

    #[test]
    fn empty_history_continues() {
        assert_eq!(early_stop_check(&[], &StopRule::default()), StopDecision::Continue);
    }

    #[test]
    fn validation() {
        assert!(StopRule {
            patience: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StopRule {
            train_accuracy_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StopRule::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn decision_is_pure(
            val in proptest::collection::vec(0.0f64..2.0, 1..40),
            acc in 0.0f64..1.0,
            patience in 1usize..8,
        ) {
            let rule = StopRule { patience, ..Default::default() };
            let h = series(acc, &val);
            prop_assert_eq!(early_stop_check(&h, &rule), early_stop_check(&h.clone(), &rule));
        }
    }
}
