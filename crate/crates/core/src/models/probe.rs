use super::model::{Model, ParamKind, ParamRole};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{NormMode, Tape, Tensor};

/// Outcome of [`zero_output_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroOutputReport {
    /// The feature extractor output `f(θ; x)` is exactly zero.
    pub output_zero: bool,
    /// `∂loss/∂W` of the head weight is exactly zero.
    pub head_grad_zero: bool,
    /// `∂loss/∂θ` is exactly zero for every body parameter.
    pub body_grad_zero: bool,
}

impl ZeroOutputReport {
    pub fn all(&self) -> bool {
        self.output_zero && self.head_grad_zero && self.body_grad_zero
    }
}

/// Evaluate the model at its current parameters on one batch and report
/// whether it sits in the all-zero trap: a zero feature output and zero
/// gradients for everything but the head bias.
///
/// The model itself is not modified (batch-norm statistics included).
pub fn zero_output_check<T: Scalar>(model: &Model<T>, x: &Tensor<T>, labels: &[usize]) -> Result<ZeroOutputReport> {
    let mut probe = model.clone();
    let mut tape = Tape::new();
    let fwd = probe.forward(&mut tape, x.clone(), NormMode::Train)?;
    let loss = tape.softmax_cross_entropy(fwd.logits, labels)?;
    let grads = tape.backward(loss)?;
    let is_zero = |t: Option<&Tensor<T>>| t.is_none_or(|t| t.data().iter().all(|v| *v == T::zero()));

    let output_zero = tape.value(fwd.features).data().iter().all(|v| *v == T::zero());
    let mut head_grad_zero = true;
    let mut body_grad_zero = true;
    for (p, v) in model.params().iter().zip(&fwd.params) {
        let zero = is_zero(grads.get(*v));
        match (p.role, p.kind) {
            (ParamRole::Head, ParamKind::Weight) => head_grad_zero &= zero,
            (ParamRole::Head, _) => {}
            (ParamRole::Body, _) => body_grad_zero &= zero,
        }
    }
    Ok(ZeroOutputReport { output_zero, head_grad_zero, body_grad_zero })
}
