use ndarray::{Array, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenseHead, HeadGradients};
use crate::Scalar;

/// RMSprop hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            learning_rate: 3e-5,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

impl RmsProp {
    /// One in-place update:
    ///
    /// ```text
    /// state  <- rho * state + (1 - rho) * grad^2
    /// params <- params - lr * grad / (sqrt(state) + eps)
    /// ```
    ///
    /// Nothing is modified if any gradient is NaN or infinite.
    pub fn step<T: Scalar, D: Dimension>(
        &self,
        params: &mut Array<T, D>,
        grads: ArrayView<'_, T, D>,
        state: &mut Array<T, D>,
    ) -> Result<()> {
        if params.shape() != grads.shape() || params.shape() != state.shape() {
            return Err(Error::shape(
                "rmsprop operands",
                format!("{:?}", params.shape()),
                format!("grads {:?}, state {:?}", grads.shape(), state.shape()),
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let rho = T::of(self.rho);
        let keep = T::one() - rho;
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        Zip::from(params).and(&grads).and(state).for_each(|p, &g, s| {
            *s = rho * *s + keep * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        });
        Ok(())
    }
}

/// Running mean-square accumulators for every head tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOptimizerState<T> {
    pub w1: ndarray::Array2<T>,
    pub b1: ndarray::Array1<T>,
    pub w2: ndarray::Array1<T>,
    pub b2: ndarray::Array1<T>,
}

impl<T: Scalar> HeadOptimizerState<T> {
    pub fn zeros_like(head: &DenseHead<T>) -> Self {
        HeadOptimizerState {
            w1: ndarray::Array2::zeros(head.w1.dim()),
            b1: ndarray::Array1::zeros(head.b1.dim()),
            w2: ndarray::Array1::zeros(head.w2.dim()),
            b2: ndarray::Array1::zeros(head.b2.dim()),
        }
    }
}

impl RmsProp {
    pub fn step_head<T: Scalar>(
        &self,
        head: &mut DenseHead<T>,
        grads: &HeadGradients<T>,
        state: &mut HeadOptimizerState<T>,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.step(&mut head.w1, grads.w1.view(), &mut state.w1)?;
        self.step(&mut head.b1, grads.b1.view(), &mut state.b1)?;
        self.step(&mut head.w2, grads.w2.view(), &mut state.w2)?;
        self.step(&mut head.b2, grads.b2.view(), &mut state.b2)
    }
}
