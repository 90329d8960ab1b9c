//! Datasets: MNIST in IDX format, synthetic convex problems and their
//! high-precision solutions.

mod convex;
mod dataset;
mod idx;

pub use convex::{
    convex_oracle, convex_oracle_from, make_synthetic_lasso, make_synthetic_logistic, ConvexKind, ConvexProblem,
    OracleSolution, LIPSCHITZ_MARGIN, ORACLE_MAX_ITERATIONS, POWER_ITERATIONS,
};
pub use dataset::{load_mnist, minibatch_indices, LabeledDataset, Minibatches, Mnist};
pub use idx::{load_idx, parse_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
