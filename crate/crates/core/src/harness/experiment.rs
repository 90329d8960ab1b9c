use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{DatasetConfig, ExperimentConfig, ModelConfig, Precision};
use super::train::{evaluate_record, make_record, train_epoch, RunReport, TrainSettings};
use crate::asr::{AsrState, FreezeMask};
use crate::data::{load_mnist, Mnist};
use crate::error::{bail, Error, Result};
use crate::metrics::{evaluate, MetricsRecord};
use crate::models::{build_mlp, build_small_cnn, init_scaled_uniform, Model};
use crate::optim::{apply_hyper_schedule, Optimizer};
use crate::scalar::Scalar;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.spda";
pub const CONFIG_FILE: &str = "config.json";

/// Extra controls for [`run_experiment_with`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of starting afresh.
    pub resume: Option<PathBuf>,
    /// Stop after this epoch, as if interrupted.
    pub stop_after: Option<usize>,
}

/// Train per `cfg`, writing outputs to `cfg.out_dir` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    match cfg.train.precision {
        Precision::F64 => Experiment::<f64>::prepare(cfg)?.run(opts),
        Precision::F32 => Experiment::<f32>::prepare(cfg)?.run(opts),
    }
}

/// Build the model described by `cfg` (uninitialized).
pub fn build_model<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    match cfg {
        ModelConfig::Mlp { dims } => {
            if dims.first() != Some(&784) {
                bail!(Config, "MNIST MLPs take 784 inputs, got {:?}", dims.first());
            }
            build_mlp(dims, true)
        }
        ModelConfig::Cnn { .. } => build_small_cnn(&cfg.cnn_spec().expect("cnn config")),
    }
}

pub fn load_data<T: Scalar>(cfg: &ExperimentConfig) -> Result<Mnist<T>> {
    let DatasetConfig::Mnist { train_limit, test_limit, .. } = &cfg.dataset else {
        bail!(Config, "training runs need the mnist dataset; convex problems go through `converge`");
    };
    let dir = cfg.dataset.mnist_dir().expect("mnist");
    let mut data = load_mnist::<T>(&dir)?;
    if let Some(n) = train_limit {
        data.train = data.train.truncated(*n)?;
    }
    if let Some(n) = test_limit {
        data.test = data.test.truncated(*n)?;
    }
    Ok(data)
}

struct Experiment<T> {
    cfg: ExperimentConfig,
    data: Mnist<T>,
    settings: TrainSettings,
}

impl<T: Scalar> Experiment<T> {
    fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = load_data(cfg)?;
        let settings =
            TrainSettings { batch_size: cfg.train.batch_size, seed: cfg.train.seed, eval_batch: cfg.train.eval_batch };
        Ok(Experiment { cfg: cfg.clone(), data, settings })
    }

    fn fresh_state(&self) -> Result<(Model<T>, Optimizer<T>)> {
        let o = &self.cfg.optimizer;
        let mut model = build_model(&self.cfg.model)?;
        if o.zero_init {
            model.zero_parameters();
        } else {
            init_scaled_uniform(&mut model, o.sqrt_s * o.sqrt_s, self.cfg.train.seed)?;
        }
        let (alpha, lambda) = o.hyper_schedule()?.at(1)?;
        let opt = Optimizer::new(o.kind, alpha, lambda)?.with_rate(o.learning_rate())?;
        Ok((model, opt))
    }

    fn run(&self, opts: &RunOptions) -> Result<RunReport> {
        let cfg = &self.cfg;
        let hash = cfg.hash();
        let out = cfg.out_dir.as_deref();
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let text = serde_json::to_string_pretty(cfg)?;
            std::fs::write(dir.join(CONFIG_FILE), text).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
        }

        let (mut model, mut opt) = self.fresh_state()?;
        let mut mask: Option<FreezeMask> = None;
        let mut report = RunReport::default();
        let mut timing: Vec<(usize, f64)> = Vec::new();
        let mut done = 0;
        match &opts.resume {
            Some(path) => {
                let ck = load_checkpoint(path, &model)?;
                if ck.config_hash != hash {
                    return Err(Error::ConfigHashMismatch { expected: hex(&hash), found: hex(&ck.config_hash) });
                }
                (model, opt, mask, done) = (ck.model, ck.optimizer, ck.mask, ck.epoch);
                if let Some(dir) = out {
                    report.records =
                        read_records(&dir.join(METRICS_FILE))?.into_iter().filter(|r| r.epoch <= done).collect();
                }
            }
            None => {
                // no training yet: the loss column holds the test loss
                let eval = evaluate(&mut model, &self.data.test, self.settings.eval_batch)?;
                report.records.push(make_record(&eval, &model, &opt, 0, 1, eval.loss));
            }
        }

        let schedule = cfg.optimizer.hyper_schedule()?;
        let phase1 = cfg.train.epochs;
        let total = phase1 + cfg.train.asr_epochs;
        for epoch in done + 1..=total {
            let start = Instant::now();
            if epoch > phase1 && mask.is_none() {
                if cfg.optimizer.asr_state == AsrState::Fresh {
                    opt.reset();
                }
                mask = Some(FreezeMask::from_zeros(model.params()));
            }
            apply_hyper_schedule(&schedule, epoch, &mut opt)?;
            let loss = train_epoch(&mut model, &mut opt, mask.as_mut(), &self.data.train, &self.settings, epoch)?;
            let phase = if mask.is_some() { 2 } else { 1 };
            let rec = evaluate_record(&mut model, &opt, &self.data.test, &self.settings, epoch, phase, loss)?;
            report.records.push(rec);
            timing.push((epoch, start.elapsed().as_secs_f64()));

            if let Some(dir) = out {
                write_outputs(dir, &report, &timing)?;
                let every = cfg.train.checkpoint_every;
                if (every > 0 && epoch % every == 0) || epoch == total || opts.stop_after == Some(epoch) {
                    let ck = Checkpoint {
                        config_hash: hash,
                        epoch,
                        model: model.clone(),
                        optimizer: opt.clone(),
                        mask: mask.clone(),
                    };
                    save_checkpoint(dir.join(CHECKPOINT_FILE), &ck)?;
                }
            }
            if opts.stop_after == Some(epoch) {
                break;
            }
        }
        if let Some(dir) = out {
            write_outputs(dir, &report, &timing)?;
            if total == 0 {
                let ck = Checkpoint { config_hash: hash, epoch: 0, model, optimizer: opt, mask };
                save_checkpoint(dir.join(CHECKPOINT_FILE), &ck)?;
            }
        }
        Ok(report)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One JSON object per line.
pub fn metrics_jsonl(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let mut r = r.clone();
        r.seconds = None;
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn summary_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn write_outputs(dir: &Path, report: &RunReport, timing: &[(usize, f64)]) -> Result<()> {
    let write =
        |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
    write(METRICS_FILE, metrics_jsonl(&report.records)?)?;
    write(SUMMARY_FILE, summary_csv(&report.records))?;
    let mut t = String::from("epoch,seconds\n");
    for (e, s) in timing {
        let _ = writeln!(t, "{e},{s:.3}");
    }
    write(TIMING_FILE, t)
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Test-set metrics of a saved checkpoint, which must come from `cfg`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<MetricsRecord> {
    fn inner<T: Scalar>(cfg: &ExperimentConfig, path: &Path) -> Result<MetricsRecord> {
        let exp = Experiment::<T>::prepare(cfg)?;
        let template = build_model::<T>(&cfg.model)?;
        let ck = load_checkpoint(path, &template)?;
        let hash = cfg.hash();
        if ck.config_hash != hash {
            return Err(Error::ConfigHashMismatch { expected: hex(&hash), found: hex(&ck.config_hash) });
        }
        let mut model = ck.model;
        let eval = evaluate(&mut model, &exp.data.test, exp.settings.eval_batch)?;
        let phase = if ck.mask.is_some() { 2 } else { 1 };
        Ok(make_record(&eval, &model, &ck.optimizer, ck.epoch, phase, eval.loss))
    }
    match cfg.train.precision {
        Precision::F64 => inner::<f64>(cfg, path),
        Precision::F32 => inner::<f32>(cfg, path),
    }
}
