//! The optimization loop: RMSprop on binary cross-entropy, one step per
//! augmented batch, with per-epoch metrics and a callback-style stop.

pub mod loss;
pub mod optimizer;
pub mod stop;

use std::time::Instant;

use ndarray::{Array1, ArrayView, Dimension};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{bce_logit_gradient, binary_cross_entropy, EPSILON};
pub use optimizer::{HeadOptimizerState, RmsProp};
pub use stop::{early_stop_check, StopDecision, StopReason, StopRule};

use crate::augment::{augmented_batches, plain_batches, AugmentConfig};
use crate::dataset::{DatasetManifest, LoadedSplit, PixelRange, Split};
use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, rates, ConfusionCounts, MetricValues, DEFAULT_THRESHOLD};
use crate::model::ClassifierModel;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub max_epochs: usize,
    pub stop_rule: StopRule,
    /// Seeds dropout; `None` defers to the pipeline seed.
    pub seed: Option<u64>,
    /// When false, every `seconds` value is written as 0 so logs are
    /// byte-reproducible.
    pub record_timing: bool,
    pub decision_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 32,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-7,
            max_epochs: 100,
            stop_rule: StopRule::default(),
            seed: None,
            record_timing: true,
            decision_threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "training: learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.validate_loop()
    }

    // Everything except the learning-rate sign; `train` accepts lr = 0.
    fn validate_loop(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("training: {msg}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad(format!("rmsprop_decay must lie in (0, 1), got {}", self.rmsprop_decay));
        }
        if self.rmsprop_epsilon.is_nan() || self.rmsprop_epsilon <= 0.0 {
            return bad(format!(
                "rmsprop_epsilon must be positive, got {}",
                self.rmsprop_epsilon
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!(
                "decision_threshold must lie in (0, 1), got {}",
                self.decision_threshold
            ));
        }
        self.stop_rule.validate()
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.learning_rate,
            rho: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }
}

/// One RMSprop update using the hyperparameters in `cfg`.
pub fn rmsprop_step<T: Scalar, D: Dimension>(
    params: &mut ndarray::Array<T, D>,
    grads: ArrayView<'_, T, D>,
    state: &mut ndarray::Array<T, D>,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.optimizer().step(params, grads, state)
}

/// One row of the per-epoch log. Field names in serialized form match the
/// CSV header.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "train_acc")]
    pub train_accuracy: f64,
    pub train_precision: f64,
    pub train_recall: f64,
    pub val_loss: f64,
    #[serde(rename = "val_acc")]
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    #[serde(rename = "seconds")]
    pub duration_seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,train_loss,train_acc,train_precision,train_recall,val_loss,val_acc,val_precision,val_recall,seconds";

/// Loss of a single optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub config: TrainConfig,
    pub data_seed: u64,
    pub dropout_seed: u64,
    pub total_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_log: Vec<BatchRecord>,
}

impl TrainingRun {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Writes records as CSV with [`EPOCH_CSV_HEADER`].
pub fn epochs_to_csv(records: &[EpochRecord]) -> Result<Vec<u8>> {
    to_csv(records)
}

pub fn batches_to_csv(records: &[BatchRecord]) -> Result<Vec<u8>> {
    to_csv(records)
}

fn to_csv<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let csv_err = |e: String| Error::io("<csv buffer>", std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(e.to_string()))?;
    }
    w.into_inner().map_err(|e| csv_err(e.to_string()))
}

pub fn epochs_from_csv(bytes: &[u8]) -> Result<Vec<EpochRecord>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<EpochRecord>, _>>()
        .map_err(|e| Error::Parse {
            path: "epochs.csv".into(),
            reason: e.to_string(),
        })
}

/// Decoded training and validation images plus the final pixel mapping.
#[derive(Clone, Debug)]
pub struct TrainingData<T> {
    pub train: LoadedSplit<T>,
    pub val: LoadedSplit<T>,
    pub pixel_range: PixelRange,
}

impl<T: Scalar> TrainingData<T> {
    pub fn load(manifest: &DatasetManifest, size: (usize, usize), pixel_range: PixelRange) -> Result<Self> {
        Ok(TrainingData {
            train: LoadedSplit::load(manifest.samples(Split::Train), size)?,
            val: LoadedSplit::load(manifest.samples(Split::Val), size)?,
            pixel_range,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub loss: f64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: MetricValues,
}

/// Probabilities for every sample of `split`, in split order.
pub fn predict_split<T: Scalar>(
    model: &ClassifierModel<T>,
    split: &LoadedSplit<T>,
    batch_size: usize,
    pixel_range: PixelRange,
) -> Result<Array1<T>> {
    let mut probs = Vec::with_capacity(split.len());
    for mut batch in plain_batches(split, batch_size) {
        pixel_range.apply(&mut batch.pixels);
        probs.extend(model.predict(batch.pixels.view())?);
    }
    Ok(Array1::from(probs))
}

/// Loss and thresholded metrics of `model` over an entire split, no augmentation.
pub fn evaluate<T: Scalar>(
    model: &ClassifierModel<T>,
    split: &LoadedSplit<T>,
    batch_size: usize,
    threshold: f64,
    pixel_range: PixelRange,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let probs = predict_split(model, split, batch_size, pixel_range)?;
    score(&probs, &targets_of(split), threshold)
}

fn targets_of<T: Scalar>(split: &LoadedSplit<T>) -> Array1<T> {
    split.labels.iter().map(|l| T::of(f64::from(l.target()))).collect()
}

fn score<T: Scalar>(probs: &Array1<T>, targets: &Array1<T>, threshold: f64) -> Result<Evaluation> {
    let loss = binary_cross_entropy(probs.view(), targets.view())?.to_f64_lossy();
    let counts = confusion_counts(
        probs.as_slice().expect("contiguous"),
        targets.as_slice().expect("contiguous"),
        threshold,
    )?;
    Ok(Evaluation {
        samples: probs.len(),
        loss,
        threshold,
        counts,
        metrics: rates(&counts)?,
    })
}

/// Trains the head of `model` in place.
///
/// Each epoch shuffles and augments the training split, takes one RMSprop
/// step per batch and then evaluates the unaugmented validation split.
/// Training loss is the mean of the batch losses; training accuracy,
/// precision and recall come from the counts accumulated over the epoch's
/// training-mode predictions, each taken before its step.
pub fn train<T: Scalar>(
    model: &mut ClassifierModel<T>,
    data: &TrainingData<T>,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<TrainingRun> {
    cfg.validate_loop()?;
    aug.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let dropout_seed = cfg.seed.unwrap_or(0);
    let data_seed = aug.seed.unwrap_or(dropout_seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(data_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let optimizer = cfg.optimizer();
    let mut state = HeadOptimizerState::zeros_like(&model.head);

    // the backbone is frozen, so validation features never change
    let val_targets = targets_of(&data.val);
    let mut val_features = Vec::with_capacity(data.val.len());
    for mut batch in plain_batches(&data.val, cfg.batch_size) {
        data.pixel_range.apply(&mut batch.pixels);
        val_features.push(model.backbone.features(batch.pixels.view())?);
    }

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut batch_log = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut counts = ConfusionCounts::default();
        for (b, mut batch) in augmented_batches(&data.train, aug, cfg.batch_size, &mut data_rng)?.enumerate() {
            data.pixel_range.apply(&mut batch.pixels);
            let features = model.backbone.features(batch.pixels.view())?;
            let mask = model.head.dropout_mask(batch.len(), &mut dropout_rng);
            let (loss, grads, pass) =
                model
                    .head
                    .loss_and_gradients(features.view(), batch.targets.view(), mask.as_ref())?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, records });
            }
            counts += confusion_counts(
                pass.probabilities.as_slice().expect("contiguous"),
                batch.targets.as_slice().expect("contiguous"),
                cfg.decision_threshold,
            )?;
            optimizer.step_head(&mut model.head, &grads, &mut state)?;
            loss_sum += loss;
            batches += 1;
            batch_log.push(BatchRecord {
                epoch,
                batch: b + 1,
                size: batch.len(),
                loss,
            });
        }
        let train_metrics = rates(&counts)?;

        let mut probs = Vec::with_capacity(data.val.len());
        for f in &val_features {
            probs.extend(model.head.forward(f.view(), None)?.probabilities);
        }
        let val = score(&Array1::from(probs), &val_targets, cfg.decision_threshold)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, records });
        }

        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_accuracy: train_metrics.accuracy,
            train_precision: train_metrics.precision,
            train_recall: train_metrics.recall,
            val_loss: val.loss,
            val_accuracy: val.metrics.accuracy,
            val_precision: val.metrics.precision,
            val_recall: val.metrics.recall,
            duration_seconds: if cfg.record_timing {
                epoch_start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if let StopDecision::Stop(reason) = early_stop_check(&records, &cfg.stop_rule) {
            stop_reason = reason;
            break;
        }
    }
    Ok(TrainingRun {
        records,
        stop_reason,
        config: cfg.clone(),
        data_seed,
        dropout_seed,
        total_seconds: if cfg.record_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
        batch_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;
    use crate::model::{build_classifier, BackboneSpec, HeadSpec};
    use ndarray::Array3;

    fn stripes(vertical: bool, phase: usize) -> Array3<f64> {
        Array3::from_shape_fn((16, 16, 3), |(y, x, _)| {
            let t = if vertical { x } else { y };
            if (t + phase) % 4 < 2 {
                0.9
            } else {
                0.1
            }
        })
    }

    fn toy_data(n: usize) -> TrainingData<f64> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let positive = i % 2 == 0;
            images.push(stripes(positive, i % 4));
            labels.push(if positive {
                ClassLabel::CovidPositive
            } else {
                ClassLabel::CovidNegative
            });
        }
        let split = LoadedSplit::from_parts(images, labels);
        TrainingData {
            train: split.clone(),
            val: split,
            pixel_range: PixelRange::Unit,
        }
    }

    fn toy_model(seed: u64) -> ClassifierModel<f64> {
        let bb = BackboneSpec {
            input_size: [16, 16],
            ..BackboneSpec::tiny()
        };
        let head = HeadSpec {
            dense_units: 16,
            ..Default::default()
        };
        build_classifier(&bb, &head, seed).unwrap()
    }

    fn quiet(cfg: TrainConfig) -> TrainConfig {
        TrainConfig {
            record_timing: false,
            ..cfg
        }
    }

    #[test]
    fn zero_threshold_stops_after_first_epoch() {
        let mut m = toy_model(0);
        let cfg = quiet(TrainConfig {
            batch_size: 4,
            stop_rule: StopRule {
                train_accuracy_threshold: 0.0,
                ..Default::default()
            },
            ..Default::default()
        });
        let run = train(&mut m, &toy_data(8), &AugmentConfig::none(), &cfg).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.stop_reason, StopReason::Threshold);
    }

    #[test]
    fn train_loss_is_mean_of_batch_losses() {
        let mut m = toy_model(1);
        let cfg = quiet(TrainConfig {
            batch_size: 3,
            max_epochs: 3,
            ..Default::default()
        });
        let run = train(&mut m, &toy_data(10), &AugmentConfig::default(), &cfg).unwrap();
        assert_eq!(run.stop_reason, StopReason::MaxEpochs);
        for r in &run.records {
            let losses: Vec<f64> = run
                .batch_log
                .iter()
                .filter(|b| b.epoch == r.epoch)
                .map(|b| b.loss)
                .collect();
            assert_eq!(losses.len(), 4);
            assert_eq!(r.train_loss, losses.iter().sum::<f64>() / losses.len() as f64);
        }
        let epochs: Vec<usize> = run.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
    }

    #[test]
    fn frozen_model_with_zero_lr_has_constant_loss() {
        let mut m = toy_model(2);
        m.head.dropout_rate = 0.0;
        let before = m.head.clone();
        let cfg = quiet(TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            max_epochs: 4,
            ..Default::default()
        });
        let run = train(&mut m, &toy_data(12), &AugmentConfig::none(), &cfg).unwrap();
        assert_eq!(m.head, before);
        let first = run.records[0].train_loss;
        for r in &run.records {
            // batch composition changes with the shuffle, only the summation order differs
            assert!(
                (r.train_loss - first).abs() <= 1e-12 * first.max(1.0),
                "{} vs {first}",
                r.train_loss
            );
            assert_eq!(r.val_loss, run.records[0].val_loss);
        }
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let cfg = quiet(TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            seed: Some(9),
            ..Default::default()
        });
        let aug = AugmentConfig::default();
        let a = train(&mut toy_model(3), &toy_data(12), &aug, &cfg).unwrap();
        let b = train(&mut toy_model(3), &toy_data(12), &aug, &cfg).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: Some(10), ..cfg };
        let c = train(&mut toy_model(3), &toy_data(12), &aug, &other).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn rmsprop_descends_on_a_two_sample_problem() {
        let x = ndarray::array![[1.0f64, -0.5], [-0.8, 0.3]];
        let y = ndarray::array![1.0, 0.0];
        let spec = HeadSpec {
            dense_units: 3,
            dropout_rate: 0.0,
            ..Default::default()
        };
        let mut head = crate::model::DenseHead::<f64>::init(&spec, 2, 7).unwrap();
        let opt = RmsProp {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut state = HeadOptimizerState::zeros_like(&head);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let (l, g, _) = head.loss_and_gradients(x.view(), y.view(), None).unwrap();
            losses.push(l);
            opt.step_head(&mut head, &g, &mut state).unwrap();
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            rmsprop_decay: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            rmsprop_epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_header_and_round_trip() {
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 1.4701,
            train_accuracy: 0.5251,
            val_loss: 0.6272,
            val_accuracy: 0.6857,
            ..Default::default()
        };
        let bytes = epochs_to_csv(std::slice::from_ref(&rec)).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), EPOCH_CSV_HEADER);
        assert_eq!(epochs_from_csv(&bytes).unwrap(), vec![rec]);
    }

    #[test]
    fn evaluation_of_an_empty_split_fails() {
        let m = toy_model(4);
        let empty = LoadedSplit::<f64>::from_parts(vec![], vec![]);
        assert!(matches!(
            evaluate(&m, &empty, 4, 0.5, PixelRange::Unit),
            Err(Error::EmptyEvaluation)
        ));
    }
}
