use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Compare the tape gradient of a scalar function against central
/// differences.
///
/// `build` records the function on a fresh tape given the input variable
/// and returns the scalar output. The result is
/// `max_i |analytic_i − numeric_i| / (|numeric_i| + 1e-8)`.
pub fn grad_check<T, F>(build: F, point: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > T::zero()) {
        bail!(Argument, "finite-difference step must be positive");
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = build(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = match grads.get(x) {
        Some(g) => g.data().to_vec(),
        None => vec![T::zero(); point.numel()],
    };

    let eval = |p: Tensor<T>| -> Result<T> {
        let mut tape = Tape::inference();
        let x = tape.param(p);
        let y = build(&mut tape, x)?;
        Ok(tape.value(y).data()[0])
    };

    let two = T::c(2.0);
    let floor = T::c(1e-8);
    let mut worst = T::zero();
    #[allow(clippy::needless_range_loop)]
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let err = (analytic[i] - numeric).abs() / (numeric.abs() + floor);
        worst = worst.max(err);
    }
    Ok(worst)
}
