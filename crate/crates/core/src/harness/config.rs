use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asr::AsrState;
use crate::error::{bail, Error, Result};
use crate::models::CnnSpec;
use crate::optim::{HyperRange, HyperSchedule, LearningRate, OptimizerKind};

/// Environment variable naming the MNIST directory when the config omits it.
pub const MNIST_DIR_ENV: &str = "SPARSE_RDA_MNIST";
pub const DEFAULT_MNIST_DIR: &str = "data/mnist";

/// A full experiment description, usually read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Settings of `converge` runs on convex problems.
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    /// Optimizers run side by side by `compare`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        /// Directory with the four IDX files; falls back to
        /// `$SPARSE_RDA_MNIST`, then `data/mnist`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        /// Use only the first samples of each split.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Lasso(SyntheticConfig),
    Logistic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub support: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

impl DatasetConfig {
    pub fn is_convex(&self) -> bool {
        !matches!(self, DatasetConfig::Mnist { .. })
    }

    pub fn mnist_dir(&self) -> Option<PathBuf> {
        match self {
            DatasetConfig::Mnist { path, .. } => Some(path.clone().unwrap_or_else(default_mnist_dir)),
            _ => None,
        }
    }
}

pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR), PathBuf::from)
}

/// Where batch normalization goes in a CNN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormPlacement {
    #[default]
    None,
    /// After every conv.
    Conv,
    /// After every conv and every hidden fully connected layer.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        dims: Vec<usize>,
    },
    Cnn {
        #[serde(default = "reference_channels")]
        channels: Vec<usize>,
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default = "reference_fc")]
        fc_dims: Vec<usize>,
        #[serde(default)]
        batchnorm: BatchNormPlacement,
        #[serde(default = "two")]
        pool: usize,
    },
}

fn reference_channels() -> Vec<usize> {
    vec![1, 8, 16]
}
fn reference_fc() -> Vec<usize> {
    vec![64, 10]
}
fn three() -> usize {
    3
}
fn two() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Cnn {
            channels: reference_channels(),
            kernel: 3,
            fc_dims: reference_fc(),
            batchnorm: BatchNormPlacement::None,
            pool: 2,
        }
    }
}

impl ModelConfig {
    /// CNN layout for `[1, 28, 28]` inputs.
    pub fn cnn_spec(&self) -> Option<CnnSpec> {
        match self {
            ModelConfig::Cnn { channels, kernel, fc_dims, batchnorm, pool } => Some(CnnSpec {
                input: [1, 28, 28],
                channels: channels.clone(),
                kernel: *kernel,
                fc_dims: fc_dims.clone(),
                batchnorm: *batchnorm != BatchNormPlacement::None,
                fc_batchnorm: *batchnorm == BatchNormPlacement::All,
                pool: *pool,
            }),
            ModelConfig::Mlp { .. } => None,
        }
    }
}

/// How `α` is chosen in a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// Use `optimizer.alpha` as given.
    Fixed,
    /// `α = G/D`, the constant minimizing the `γD² + G²/γ` form of the
    /// regret bound: `G` is the root-mean-square per-sample gradient norm
    /// at `w₁`, `D = ‖w*‖₂/√2` from the oracle solution.
    Theory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Square root of the initialization scale `s`.
    #[serde(default = "one")]
    pub sqrt_s: f64,
    /// Piecewise `(α, λ)` by epoch; overrides `alpha`/`lambda` when present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<HyperRange>,
    /// Constant learning rate for SGD and Prox-SGD instead of `1/(α√t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Optimizer state at the start of adaptive sparse retraining.
    #[serde(default)]
    pub asr_state: AsrState,
    /// Initialize all trainable parameters to zero instead of `U(−b, b)`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_init: bool,
}

fn default_alpha() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn hyper_schedule(&self) -> Result<HyperSchedule> {
        if self.schedule.is_empty() {
            HyperSchedule::constant(self.alpha, self.lambda)
        } else {
            HyperSchedule::new(self.schedule.clone())
        }
    }

    pub fn learning_rate(&self) -> LearningRate {
        self.eta.map_or(LearningRate::Decaying, LearningRate::Constant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub asr_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Write a checkpoint after every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub precision: Precision,
}

/// Floating-point type used for model training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

fn default_batch() -> usize {
    128
}
fn default_eval_batch() -> usize {
    1000
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 0,
            asr_epochs: 0,
            seed: 0,
            eval_batch: 1000,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

/// Start point of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartPoint {
    Zero,
    /// Coordinates i.i.d. `U(−scale, scale)` from the run seed.
    Uniform {
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Number of stochastic steps.
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Samples per stochastic gradient.
    #[serde(default = "one_usize")]
    pub batch_size: usize,
    #[serde(default = "default_start")]
    pub start: StartPoint,
    #[serde(default = "default_rule")]
    pub alpha_rule: AlphaRule,
    /// Inclusive `[t_min, t_max]` for the slope fit.
    #[serde(default = "default_window")]
    pub window: [u64; 2],
    #[serde(default = "default_ppd")]
    pub points_per_decade: usize,
    #[serde(default = "default_tol")]
    pub oracle_tol: f64,
}

fn default_steps() -> u64 {
    100_000
}
fn one_usize() -> usize {
    1
}
fn default_start() -> StartPoint {
    StartPoint::Uniform { scale: 1.0 }
}
fn default_rule() -> AlphaRule {
    AlphaRule::Theory
}
fn default_window() -> [u64; 2] {
    [100, 100_000]
}
fn default_ppd() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-10
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            steps: default_steps(),
            batch_size: 1,
            start: default_start(),
            alpha_rule: default_rule(),
            window: default_window(),
            points_per_decade: default_ppd(),
            oracle_tol: default_tol(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Check ranges and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.optimizer.hyper_schedule()?;
        for o in &self.compare {
            o.hyper_schedule()?;
        }
        if !(self.optimizer.sqrt_s > 0.0 && self.optimizer.sqrt_s.is_finite()) {
            bail!(Config, "sqrt_s must be positive, got {}", self.optimizer.sqrt_s);
        }
        if self.train.batch_size == 0 || self.train.eval_batch == 0 {
            bail!(Config, "batch sizes must be at least 1");
        }
        if let Some(eta) = self.optimizer.eta {
            if !(eta > 0.0) {
                bail!(Config, "eta must be positive, got {}", eta);
            }
        }
        if let Some(dir) = self.dataset.mnist_dir() {
            if !dir.is_dir() {
                bail!(Config, "MNIST directory {} does not exist", dir.display());
            }
        }
        let schedule = self.optimizer.hyper_schedule()?;
        let total = self.train.epochs + self.train.asr_epochs;
        if total > 0 && schedule.last_epoch() < total {
            bail!(Config, "schedule covers {} epochs but the run has {}", schedule.last_epoch(), total);
        }
        if self.dataset.is_convex() {
            let c = &self.convergence;
            if c.batch_size == 0 || !(c.oracle_tol > 0.0) {
                bail!(Config, "convergence batch size and oracle tolerance must be positive");
            }
            if c.window[0] >= c.window[1] || c.window[0] == 0 {
                bail!(Config, "slope window {:?} is empty", c.window);
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output directory removed;
    /// checkpoints refuse to resume under a different hash.
    pub fn hash(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        canonical.train.checkpoint_every = 0;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).into()
    }
}
