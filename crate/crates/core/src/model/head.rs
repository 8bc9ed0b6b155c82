//! The trainable classifier head: flatten → dense → dropout → dense(1, sigmoid).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::loss::{bce_logit_gradient, binary_cross_entropy};
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Linear => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub hidden_activation: Activation,
    /// Initialization seed; `None` defers to the pipeline seed.
    pub seed: Option<u64>,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            dense_units: 1024,
            dropout_rate: 0.2,
            hidden_activation: Activation::Relu,
            seed: None,
        }
    }
}

impl HeadSpec {
    pub const OUTPUT_UNITS: usize = 1;

    pub fn validate(&self) -> Result<()> {
        if self.dense_units == 0 {
            return Err(Error::InvalidConfig("head: dense_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "head: dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Closed-form head size for `features` flattened inputs.
    pub fn parameter_count(&self, features: usize) -> usize {
        features * self.dense_units + self.dense_units + self.dense_units * Self::OUTPUT_UNITS + Self::OUTPUT_UNITS
    }
}

/// Head parameters. `w2`/`b2` hold the single output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: Array1<T>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

/// Gradients with the same layout as [`DenseHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: Array1<T>,
}

impl<T: Scalar> HeadGradients<T> {
    pub fn all_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}

/// Intermediate values of one head evaluation.
#[derive(Clone, Debug)]
pub struct HeadPass<T> {
    pub pre_activation: Array2<T>,
    pub hidden: Array2<T>,
    pub dropped: Array2<T>,
    pub logits: Array1<T>,
    pub probabilities: Array1<T>,
}

/// Logistic function kept strictly inside `(0, 1)` at every precision.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let p = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    p.max(T::min_positive_value()).min(T::below_one())
}

impl<T: Scalar> DenseHead<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &HeadSpec, features: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if features == 0 {
            return Err(Error::InvalidConfig("head: zero input features".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = spec.dense_units;
        let l1 = (6.0 / (features + u) as f64).sqrt();
        let l2 = (6.0 / (u + 1) as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((features, u), || T::of(rng.random_range(-l1..l1)));
        let w2 = Array1::from_shape_simple_fn(u, || T::of(rng.random_range(-l2..l2)));
        Ok(DenseHead {
            w1,
            b1: Array1::zeros(u),
            w2,
            b2: Array1::zeros(1),
            activation: spec.hidden_activation,
            dropout_rate: spec.dropout_rate,
        })
    }

    pub fn zeros(spec: &HeadSpec, features: usize) -> Self {
        DenseHead {
            w1: Array2::zeros((features, spec.dense_units)),
            b1: Array1::zeros(spec.dense_units),
            w2: Array1::zeros(spec.dense_units),
            b2: Array1::zeros(1),
            activation: spec.hidden_activation,
            dropout_rate: spec.dropout_rate,
        }
    }

    pub fn input_features(&self) -> usize {
        self.w1.nrows()
    }

    pub fn units(&self) -> usize {
        self.w1.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Inverted-dropout mask (`0` or `1 / keep`), or `None` when the rate is zero.
    pub fn dropout_mask<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Array2<T>> {
        if self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout_rate;
        let scale = T::of(1.0 / keep);
        Some(Array2::from_shape_simple_fn((batch, self.units()), || {
            if rng.random_bool(keep) {
                scale
            } else {
                T::zero()
            }
        }))
    }

    pub fn forward(&self, features: ArrayView2<'_, T>, mask: Option<&Array2<T>>) -> Result<HeadPass<T>> {
        if features.ncols() != self.input_features() {
            return Err(Error::shape(
                "head input features",
                self.input_features(),
                features.ncols(),
            ));
        }
        let mut pre = features.dot(&self.w1);
        pre += &self.b1;
        let act = self.activation;
        let hidden = pre.mapv(|z| act.apply(z));
        let dropped = match mask {
            Some(m) => {
                if m.dim() != hidden.dim() {
                    return Err(Error::shape(
                        "dropout mask",
                        format!("{:?}", hidden.dim()),
                        format!("{:?}", m.dim()),
                    ));
                }
                &hidden * m
            }
            None => hidden.clone(),
        };
        let b2 = self.b2[0];
        let logits = dropped.dot(&self.w2).mapv(|z| z + b2);
        let probabilities = logits.mapv(sigmoid);
        Ok(HeadPass {
            pre_activation: pre,
            hidden,
            dropped,
            logits,
            probabilities,
        })
    }

    /// Mean binary cross-entropy over the batch, with exact gradients of
    /// that value with respect to every head parameter.
    pub fn loss_and_gradients(
        &self,
        features: ArrayView2<'_, T>,
        targets: ArrayView1<'_, T>,
        mask: Option<&Array2<T>>,
    ) -> Result<(T, HeadGradients<T>, HeadPass<T>)> {
        let pass = self.forward(features, mask)?;
        let loss = binary_cross_entropy(pass.probabilities.view(), targets)?;
        let d_logits = bce_logit_gradient(pass.probabilities.view(), targets)?;

        let w2 = pass.dropped.t().dot(&d_logits);
        let b2 = Array1::from_elem(1, d_logits.sum());
        let mut d_hidden = d_logits
            .view()
            .insert_axis(Axis(1))
            .dot(&self.w2.view().insert_axis(Axis(0)));
        if let Some(m) = mask {
            d_hidden *= m;
        }
        let act = self.activation;
        ndarray::Zip::from(&mut d_hidden)
            .and(&pass.pre_activation)
            .and(&pass.hidden)
            .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        let w1 = features.t().dot(&d_hidden);
        let b1 = d_hidden.sum_axis(Axis(0));
        Ok((loss, HeadGradients { w1, b1, w2, b2 }, pass))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_stays_open() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        for z in [-1e4f32, -100.0, 40.0, 1e4] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
        assert!(sigmoid(50.0f64) < 1.0);
    }

    #[test]
    fn parameter_counts() {
        let spec = HeadSpec::default();
        assert_eq!(spec.parameter_count(17 * 17 * 768), 227_280_897);
        let tiny = HeadSpec {
            dense_units: 1,
            ..Default::default()
        };
        assert_eq!(tiny.parameter_count(1), 4);
        let h = DenseHead::<f32>::init(
            &HeadSpec {
                dense_units: 5,
                ..Default::default()
            },
            7,
            0,
        )
        .unwrap();
        assert_eq!(
            h.parameter_count(),
            HeadSpec {
                dense_units: 5,
                ..Default::default()
            }
            .parameter_count(7)
        );
    }

    #[test]
    fn zero_head_outputs_half() {
        let h = DenseHead::<f64>::zeros(
            &HeadSpec {
                dense_units: 3,
                ..Default::default()
            },
            2,
        );
        let p = h.forward(array![[1.0, -4.0], [100.0, 3.0]].view(), None).unwrap();
        assert_eq!(p.probabilities, array![0.5, 0.5]);
    }

    #[test]
    fn glorot_bounds_and_seeding() {
        let spec = HeadSpec {
            dense_units: 8,
            ..Default::default()
        };
        let a = DenseHead::<f64>::init(&spec, 24, 4).unwrap();
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(a.w1.iter().all(|w| w.abs() < limit));
        assert!(a.b1.iter().all(|&b| b == 0.0));
        assert_eq!(a, DenseHead::init(&spec, 24, 4).unwrap());
        assert_ne!(a, DenseHead::init(&spec, 24, 5).unwrap());
    }

    #[test]
    fn dropout_mask_is_inverted() {
        let spec = HeadSpec {
            dense_units: 1000,
            dropout_rate: 0.2,
            ..Default::default()
        };
        let h = DenseHead::<f64>::zeros(&spec, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = h.dropout_mask(10, &mut rng).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 1.25));
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / m.len() as f64;
        assert!((kept - 0.8).abs() < 0.02);
        let none = DenseHead::<f64>::zeros(
            &HeadSpec {
                dropout_rate: 0.0,
                ..spec
            },
            1,
        );
        assert!(none.dropout_mask(3, &mut rng).is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(HeadSpec {
            dense_units: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HeadSpec {
            dropout_rate: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn feature_width_mismatch() {
        let h = DenseHead::<f32>::zeros(
            &HeadSpec {
                dense_units: 2,
                ..Default::default()
            },
            3,
        );
        assert!(matches!(
            h.forward(Array2::zeros((1, 4)).view(), None),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
