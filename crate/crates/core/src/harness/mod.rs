//! Config-driven experiments: two-phase training with metrics output and
//! checkpoints, convergence studies on convex problems, and optimizer
//! comparisons.

mod checkpoint;
mod config;
mod experiment;
mod study;
mod train;

pub use checkpoint::{load_checkpoint, peek_config_hash, save_checkpoint, Checkpoint, MAGIC};
pub use config::{
    default_mnist_dir, AlphaRule, BatchNormPlacement, ConvergenceConfig, DatasetConfig, ExperimentConfig, ModelConfig,
    OptimizerConfig, Precision, StartPoint, SyntheticConfig, TrainConfig, DEFAULT_MNIST_DIR, MNIST_DIR_ENV,
};
pub use experiment::{
    build_model, evaluate_checkpoint, load_data, metrics_jsonl, read_records, run_experiment, run_experiment_with,
    summary_csv, RunOptions, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE, TIMING_FILE,
};
pub use study::{
    compare_optimizers, comparison_table, convex_problem, run_convergence_study, run_convex, start_point, theory_alpha,
    ComparisonRow, ConvergenceReport, ConvexRun,
};
pub use train::{epoch_seed, evaluate_record, train_epoch, RunReport, TrainSettings};
