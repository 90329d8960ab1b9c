use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `sgn(x)·max(|x| − δ, 0)` for a single value; `δ` is assumed nonnegative.
#[inline]
pub fn soft<T: Scalar>(x: T, delta: T) -> T {
    if x > delta {
        x - delta
    } else if x < -delta {
        x + delta
    } else if delta == T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Elementwise soft-thresholding, the proximal map of `δ‖·‖₁`.
pub fn soft_threshold<T: Scalar>(x: &Tensor<T>, delta: T) -> Result<Tensor<T>> {
    if delta < T::zero() || delta.is_nan() {
        bail!(Argument, "soft-threshold level must be nonnegative, got {}", delta);
    }
    Ok(x.map(|v| soft(v, delta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(soft_threshold(&t(&[1.5]), 1.0).unwrap().data(), &[0.5]);
        assert_eq!(soft_threshold(&t(&[-0.3]), 0.5).unwrap().data(), &[0.0]);
        let x = t(&[-2.0, -0.0, 0.0, 1e-300, 7.5]);
        let y = soft_threshold(&x, 0.0).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn negative_threshold_is_rejected() {
        assert!(matches!(soft_threshold(&t(&[1.0]), -0.1), Err(crate::Error::Argument(_))));
        assert!(matches!(soft_threshold(&t(&[1.0]), f64::NAN), Err(crate::Error::Argument(_))));
    }
}
