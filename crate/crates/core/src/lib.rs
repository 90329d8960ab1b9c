//! Sparse training with ℓ1-regularized dual averaging.
//!
//! The crate bundles a minimal reverse-mode autodiff engine ([`tensor`]),
//! small CNN/MLP builders with scaled-uniform initialization ([`models`]),
//! SGD, SDA, Prox-SGD and RDA update rules ([`optim`]), adaptive sparse
//! retraining and a prune-then-finetune baseline ([`asr`]), MNIST and
//! synthetic convex problems with a high-precision oracle ([`data`]),
//! evaluation metrics ([`metrics`]) and a config-driven experiment runner
//! ([`harness`]).
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment harness uses.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod asr;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Model64 = models::Model<f64>;
pub type Model32 = models::Model<f32>;
pub type Parameter64 = models::Parameter<f64>;
pub type Optimizer64 = optim::Optimizer<f64>;
pub type Optimizer32 = optim::Optimizer<f32>;
pub type ConvexProblem64 = data::ConvexProblem<f64>;
pub type LabeledDataset64 = data::LabeledDataset<f64>;
