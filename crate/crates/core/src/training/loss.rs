use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::Scalar;

/// Probabilities are clipped into `[EPSILON, 1 - EPSILON]` before the log.
pub const EPSILON: f64 = 1e-7;

fn check<T>(p: &ArrayView1<'_, T>, y: &ArrayView1<'_, T>) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::shape("binary cross-entropy targets", p.len(), y.len()));
    }
    if p.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(())
}

/// Mean of `-[y ln p + (1 - y) ln(1 - p)]` over the batch.
pub fn binary_cross_entropy<T: Scalar>(p: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<T> {
    check(&p, &y)?;
    let eps = T::of(EPSILON);
    let hi = T::one() - eps;
    let mut total = T::zero();
    Zip::from(&p).and(&y).for_each(|&p, &y| {
        let p = p.max(eps).min(hi);
        total -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
    });
    Ok(total / T::of(p.len() as f64))
}

/// Derivative of [`binary_cross_entropy`] with respect to each sigmoid logit.
///
/// Inside the clip window this is `(p - y) / n`; where the clip is active the
/// loss no longer depends on the logit and the derivative is zero.
pub fn bce_logit_gradient<T: Scalar>(p: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<Array1<T>> {
    check(&p, &y)?;
    let eps = T::of(EPSILON);
    let hi = T::one() - eps;
    let n = T::of(p.len() as f64);
    Ok(Zip::from(&p)
        .and(&y)
        .map_collect(|&p, &y| if p > eps && p < hi { (p - y) / n } else { T::zero() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn half_probability() {
        let l = binary_cross_entropy(array![0.5f64].view(), array![1.0].view()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_are_clipped() {
        let l = binary_cross_entropy(array![1.0f64, 0.0].view(), array![1.0, 0.0].view()).unwrap();
        assert!(l > 0.0);
        assert!(l <= -(1.0f64 - 1e-7).ln() + 1e-18);
        let f = binary_cross_entropy(array![1.0f32, 0.0].view(), array![1.0, 0.0].view()).unwrap();
        assert!(f.is_finite() && f < 1e-6);
    }

    #[test]
    fn two_sample_batch() {
        let l = binary_cross_entropy(array![0.9f64, 0.2].view(), array![1.0, 0.0].view()).unwrap();
        let expected = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            binary_cross_entropy(array![0.5f64].view(), array![1.0, 0.0].view()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(bce_logit_gradient(array![0.5f64, 0.1].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let y = array![1.0f64, 0.0, 1.0];
        let z = array![0.3f64, -1.2, 2.0];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let p = z.mapv(sig);
        let g = bce_logit_gradient(p.view(), y.view()).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (binary_cross_entropy(zp.mapv(sig).view(), y.view()).unwrap()
                - binary_cross_entropy(zm.mapv(sig).view(), y.view()).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
        }
    }
}
