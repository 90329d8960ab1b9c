//! First-order update rules: SGD, SDA in its averaged and perturbed forms,
//! Prox-SGD and RDA.

mod optimizer;
mod schedule;
mod soft;

pub use optimizer::{
    apply_hyper_schedule, dual_average_update, epsilon, gamma, prox_sgd_update, rda_primal, sda_perturbed_update,
    sda_primal, sgd_update, xi, LearningRate, Optimizer, OptimizerKind,
};
pub use schedule::{HyperRange, HyperSchedule};
pub use soft::{soft, soft_threshold};

/// Default λ values to sweep for CNN training; the right one is found by
/// trial, not tuned automatically.
pub const LAMBDA_GRID: [f64; 3] = [1e-5, 1e-6, 1e-7];
