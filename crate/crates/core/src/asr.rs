//! Adaptive sparse retraining: weights that reach exactly zero stay frozen
//! at zero. Also hosts the magnitude-prune-then-finetune baseline.

use crate::data::LabeledDataset;
use crate::error::{bail, Result};
use crate::harness::{evaluate_record, train_epoch, RunReport, TrainSettings};
use crate::models::{Model, Parameter};
use crate::optim::{LearningRate, Optimizer, OptimizerKind};
use crate::scalar::Scalar;

/// Per-parameter set of coordinates permanently pinned to zero. Only
/// regularized weights are ever admitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    bits: Vec<Vec<bool>>,
}

impl FreezeMask {
    /// An empty mask shaped like `params`.
    pub fn empty<T: Scalar>(params: &[Parameter<T>]) -> Self {
        FreezeMask { bits: params.iter().map(|p| vec![false; p.numel()]).collect() }
    }

    /// The mask holding every exact zero among the regularized weights.
    pub fn from_zeros<T: Scalar>(params: &[Parameter<T>]) -> Self {
        let mut mask = Self::empty(params);
        update_freeze_mask(&mut mask, params).expect("mask shaped from the same parameters");
        mask
    }

    pub fn from_bits(bits: Vec<Vec<bool>>) -> Self {
        FreezeMask { bits }
    }

    pub fn bits(&self) -> &[Vec<bool>] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.iter().filter(|&&x| x).count()).sum()
    }

    fn check<T: Scalar>(&self, params: &[Parameter<T>]) -> Result<()> {
        if self.bits.len() != params.len() || self.bits.iter().zip(params).any(|(b, p)| b.len() != p.numel()) {
            bail!(Dimension, "freeze mask does not match the parameter list");
        }
        Ok(())
    }

    /// Force every masked coordinate to zero.
    pub fn apply<T: Scalar>(&self, params: &mut [Parameter<T>]) -> Result<()> {
        self.check(params)?;
        for (bits, p) in self.bits.iter().zip(params) {
            for (w, &frozen) in p.value.data_mut().iter_mut().zip(bits) {
                if frozen {
                    *w = T::zero();
                }
            }
        }
        Ok(())
    }
}

/// Add every regularized weight that is exactly zero; returns how many
/// coordinates were newly frozen.
pub fn update_freeze_mask<T: Scalar>(mask: &mut FreezeMask, params: &[Parameter<T>]) -> Result<usize> {
    mask.check(params)?;
    let mut added = 0;
    for (bits, p) in mask.bits.iter_mut().zip(params) {
        if !p.regularized {
            continue;
        }
        for (b, &w) in bits.iter_mut().zip(p.value.data()) {
            if !*b && w == T::zero() {
                *b = true;
                added += 1;
            }
        }
    }
    Ok(added)
}

/// Optimizer step, then zero the masked coordinates, then admit new zeros.
///
/// Gradients of frozen coordinates still enter the optimizer state.
pub fn masked_step<T: Scalar>(
    opt: &mut Optimizer<T>,
    mask: &mut FreezeMask,
    params: &mut [Parameter<T>],
) -> Result<()> {
    mask.check(params)?;
    opt.step(params)?;
    mask.apply(params)?;
    update_freeze_mask(mask, params)?;
    Ok(())
}

/// Whether adaptive sparse retraining restarts the optimizer.
///
/// RDA's iterate is a function of `ḡ` and `t` alone, so a restart throws
/// the trained weights away: the first retraining step sets
/// `w = −(1/α)·soft(g₁, λ)`. Continuing is the default for that reason.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsrState {
    /// `t = 1`, `ḡ = 0`.
    Fresh,
    /// Keep `t` and `ḡ` from the first phase.
    #[default]
    Continued,
}

/// Retrain `model` for `epochs` epochs with every zero weight frozen.
///
/// `opt` is the optimizer that produced the model; with [`AsrState::Fresh`]
/// it is reset before retraining. Records are numbered from
/// `first_epoch`. Sparsity cannot decrease from one epoch to the next.
#[allow(clippy::too_many_arguments)]
pub fn asr_retrain<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Optimizer<T>,
    state: AsrState,
    epochs: usize,
    first_epoch: usize,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    settings: &TrainSettings,
) -> Result<RunReport> {
    if state == AsrState::Fresh {
        opt.reset();
    }
    let mut mask = FreezeMask::from_zeros(model.params());
    let mut report = RunReport::default();
    for epoch in first_epoch..first_epoch + epochs {
        let seconds = std::time::Instant::now();
        let loss = train_epoch(model, opt, Some(&mut mask), train, settings, epoch)?;
        let mut rec = evaluate_record(model, opt, test, settings, epoch, 2, loss)?;
        rec.seconds = Some(seconds.elapsed().as_secs_f64());
        report.records.push(rec);
    }
    Ok(report)
}

/// Mask the `⌊target·N⌋` smallest-magnitude regularized weights (`N` of
/// them in total), ties going to the lower flat index across parameters.
pub fn magnitude_prune<T: Scalar>(params: &[Parameter<T>], target: f64) -> Result<FreezeMask> {
    if !(0.0..=1.0).contains(&target) {
        bail!(Argument, "target sparsity must lie in [0, 1], got {}", target);
    }
    let mut order: Vec<(T, usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        if p.regularized {
            order.extend(p.value.data().iter().enumerate().map(|(i, w)| (w.abs(), pi, i)));
        }
    }
    let count = (target * order.len() as f64).floor() as usize;
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut mask = FreezeMask::empty(params);
    for &(_, pi, i) in &order[..count] {
        mask.bits[pi][i] = true;
    }
    Ok(mask)
}

/// Prune to `target` sparsity, then fine-tune with masked SGD at constant
/// rate `eta`. Records are numbered from `first_epoch`.
#[allow(clippy::too_many_arguments)]
pub fn prune_finetune_baseline<T: Scalar>(
    model: &mut Model<T>,
    target: f64,
    epochs: usize,
    eta: f64,
    first_epoch: usize,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    settings: &TrainSettings,
) -> Result<RunReport> {
    let mut mask = magnitude_prune(model.params(), target)?;
    mask.apply(model.params_mut())?;
    // pruned weights stay pruned; exact zeros SGD happens to produce may join
    update_freeze_mask(&mut mask, model.params())?;
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1.0, 0.0)?.with_rate(LearningRate::Constant(eta))?;
    let mut report = RunReport::default();
    for epoch in first_epoch..first_epoch + epochs {
        let loss = train_epoch(model, &mut opt, Some(&mut mask), train, settings, epoch)?;
        report.records.push(evaluate_record(model, &opt, test, settings, epoch, 2, loss)?);
    }
    Ok(report)
}
