use serde::{Deserialize, Serialize};

use crate::asr::{masked_step, FreezeMask};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, sparsity, Evaluation, MetricsRecord};
use crate::models::Model;
use crate::optim::Optimizer;
use crate::scalar::Scalar;

/// Knobs shared by every training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub seed: u64,
    /// Samples per inference batch during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { batch_size: 128, seed: 0, eval_batch: 1000 }
    }
}

/// Per-epoch records of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<MetricsRecord>,
}

impl RunReport {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// The last record of the given phase.
    pub fn last_of_phase(&self, phase: u8) -> Option<&MetricsRecord> {
        self.records.iter().rev().find(|r| r.phase == phase)
    }
}

/// Shuffle seed of one epoch, derived from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One pass over `data`; returns the mean training loss.
///
/// With a mask every step goes through [`masked_step`].
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Optimizer<T>,
    mut mask: Option<&mut FreezeMask>,
    data: &LabeledDataset<T>,
    settings: &TrainSettings,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.minibatches(settings.batch_size, epoch_seed(settings.seed, epoch))? {
        let loss = model.loss_and_grad(x, &y)?.to_f64_lossless();
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "training loss".into(), epoch });
        }
        total += loss * y.len() as f64;
        match mask.as_deref_mut() {
            Some(m) => masked_step(opt, m, model.params_mut())?,
            None => opt.step(model.params_mut())?,
        }
    }
    if model.params().iter().any(|p| !p.value.is_finite()) {
        return Err(Error::NonFinite { what: "model parameters".into(), epoch });
    }
    Ok(total / data.len().max(1) as f64)
}

/// Evaluate on `test` and package the epoch's metrics.
pub fn evaluate_record<T: Scalar>(
    model: &mut Model<T>,
    opt: &Optimizer<T>,
    test: &LabeledDataset<T>,
    settings: &TrainSettings,
    epoch: usize,
    phase: u8,
    train_loss: f64,
) -> Result<MetricsRecord> {
    let eval = evaluate(model, test, settings.eval_batch)?;
    Ok(make_record(&eval, model, opt, epoch, phase, train_loss))
}

pub(crate) fn make_record<T: Scalar>(
    eval: &Evaluation,
    model: &Model<T>,
    opt: &Optimizer<T>,
    epoch: usize,
    phase: u8,
    train_loss: f64,
) -> MetricsRecord {
    let s = sparsity(model.params());
    MetricsRecord {
        epoch,
        phase,
        loss: train_loss,
        top1: eval.top1,
        top5: eval.top5,
        sparsity: s.ratio,
        sparsity_all: s.ratio_all,
        alpha: opt.alpha(),
        lambda: opt.lambda(),
        seconds: None,
    }
}
