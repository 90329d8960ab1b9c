//! Dense tensors and a small reverse-mode autodiff engine covering the
//! layers the models need: linear, conv2d, ReLU, max-pool, batch-norm and
//! a softmax cross-entropy head.

mod dense;
mod gradcheck;
pub mod kernels;
mod tape;

pub use dense::Tensor;
pub use gradcheck::grad_check;
pub use kernels::{ConvGeometry, RunningStats, BN_EPS, BN_MOMENTUM};
pub use tape::{Gradients, NormMode, Tape, Var};
