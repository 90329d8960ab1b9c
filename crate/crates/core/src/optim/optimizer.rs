use serde::{Deserialize, Serialize};

use super::schedule::HyperSchedule;
use crate::error::{bail, Result};
use crate::models::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// SDA with `w_{t+1} = −(√t/α)·ḡ_t`.
    SdaAveraged,
    /// SDA rewritten as SGD with a vanishing shrink `ε_t` on the iterate.
    SdaPerturbed,
    ProxSgd,
    Rda,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SdaAveraged => "sda_averaged",
            OptimizerKind::SdaPerturbed => "sda_perturbed",
            OptimizerKind::ProxSgd => "prox_sgd",
            OptimizerKind::Rda => "rda",
        }
    }

    /// Whether the method keeps a running gradient average.
    pub fn uses_dual_average(self) -> bool {
        matches!(self, OptimizerKind::SdaAveraged | OptimizerKind::Rda)
    }
}

/// Step size policy of the primal methods (SGD, Prox-SGD).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    /// `η_t = 1/(α√t)`.
    Decaying,
    Constant(f64),
}

/// `ξ_t = √t/α`.
pub fn xi(t: u64, alpha: f64) -> f64 {
    (t as f64).sqrt() / alpha
}

/// `γ_t = ξ_t/t = 1/(α√t)`, also the decaying SGD rate `η_t`.
pub fn gamma(t: u64, alpha: f64) -> f64 {
    1.0 / (alpha * (t as f64).sqrt())
}

/// `ε_t = 1/(t + √(t² − t))`; `ε_1 = 1`.
pub fn epsilon(t: u64) -> f64 {
    let t = t as f64;
    1.0 / (t + (t * (t - 1.0)).sqrt())
}

/// `w ← w − η·g`.
pub fn sgd_update<T: Scalar>(w: &mut [T], g: &[T], eta: T) {
    for (w, &g) in w.iter_mut().zip(g) {
        *w -= eta * g;
    }
}

/// `ḡ ← ((t−1)/t)·ḡ + g/t`.
pub fn dual_average_update<T: Scalar>(gbar: &mut [T], g: &[T], t: u64) {
    let keep = T::c((t - 1) as f64 / t as f64);
    let add = T::c(1.0 / t as f64);
    for (a, &g) in gbar.iter_mut().zip(g) {
        *a = keep * *a + add * g;
    }
}

/// `w ← −ξ·ḡ` for an already updated average.
pub fn sda_primal<T: Scalar>(w: &mut [T], gbar: &[T], xi: T) {
    for (w, &a) in w.iter_mut().zip(gbar) {
        *w = -xi * a;
    }
}

/// `w ← (1 − ε)·w − γ·g`; with `ε = 1` the old iterate is discarded outright.
pub fn sda_perturbed_update<T: Scalar>(w: &mut [T], g: &[T], eps: T, gamma: T) {
    if eps == T::one() {
        for (w, &g) in w.iter_mut().zip(g) {
            *w = -gamma * g;
        }
        return;
    }
    let keep = T::one() - eps;
    for (w, &g) in w.iter_mut().zip(g) {
        *w = keep * *w - gamma * g;
    }
}

/// Three-case Prox-SGD update, i.e. `w ← soft(w − ηg, ηλ)`.
pub fn prox_sgd_update<T: Scalar>(w: &mut [T], g: &[T], eta: T, lambda: T) {
    let thr = eta * lambda;
    for (w, &g) in w.iter_mut().zip(g) {
        let z = *w - eta * g;
        *w = if z > thr {
            *w - eta * (g + lambda)
        } else if z < -thr {
            *w - eta * (g - lambda)
        } else {
            T::zero()
        };
    }
}

/// Three-case RDA primal map `w ← −ξ·soft(ḡ, λ)`.
///
/// `λ = 0` takes the SDA path so that both agree bit for bit.
pub fn rda_primal<T: Scalar>(w: &mut [T], gbar: &[T], xi: T, lambda: T) {
    if lambda == T::zero() {
        return sda_primal(w, gbar, xi);
    }
    for (w, &a) in w.iter_mut().zip(gbar) {
        *w = if a < -lambda {
            -xi * (a + lambda)
        } else if a > lambda {
            -xi * (a - lambda)
        } else {
            T::zero()
        };
    }
}

/// One optimizer over a list of parameters.
///
/// Regularized parameters get the ℓ1 term; the others (biases, batch-norm
/// affine terms) follow the unregularized version of the same rule with the
/// same schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T = f64> {
    kind: OptimizerKind,
    alpha: f64,
    lambda: f64,
    rate: LearningRate,
    /// Index of the next step, starting at 1.
    t: u64,
    gbar: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, alpha: f64, lambda: f64) -> Result<Self> {
        check_hyper(alpha, lambda)?;
        Ok(Optimizer { kind, alpha, lambda, rate: LearningRate::Decaying, t: 1, gbar: Vec::new() })
    }

    pub fn with_rate(mut self, rate: LearningRate) -> Result<Self> {
        if let LearningRate::Constant(eta) = rate {
            if !(eta > 0.0 && eta.is_finite()) {
                bail!(Config, "constant learning rate must be positive, got {}", eta);
            }
        }
        self.rate = rate;
        Ok(self)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rate(&self) -> LearningRate {
        self.rate
    }

    /// Index of the step that will run next (1 before any step).
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Running gradient averages, one per parameter; empty before the first
    /// step and for methods without one.
    pub fn dual_averages(&self) -> &[Tensor<T>] {
        &self.gbar
    }

    /// Change `α` and `λ` while keeping `t` and the running average.
    pub fn set_hyper(&mut self, alpha: f64, lambda: f64) -> Result<()> {
        check_hyper(alpha, lambda)?;
        self.alpha = alpha;
        self.lambda = lambda;
        Ok(())
    }

    /// Forget all progress: `t = 1`, `ḡ = 0`.
    pub fn reset(&mut self) {
        self.t = 1;
        self.gbar.clear();
    }

    /// Reinstate a saved step counter and running average.
    pub fn restore(&mut self, t: u64, gbar: Vec<Tensor<T>>) -> Result<()> {
        if t == 0 {
            bail!(State, "step counter starts at 1");
        }
        if !self.kind.uses_dual_average() && !gbar.is_empty() {
            bail!(State, "{} keeps no running average", self.kind.name());
        }
        self.t = t;
        self.gbar = gbar;
        Ok(())
    }

    /// Current primal step size (`η_t` or `γ_t`).
    pub fn step_size(&self) -> f64 {
        match (self.kind, self.rate) {
            (OptimizerKind::Sgd | OptimizerKind::ProxSgd, LearningRate::Constant(eta)) => eta,
            _ => gamma(self.t, self.alpha),
        }
    }

    /// Apply one update using the gradients stored in `params`.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Result<()> {
        let t = self.t;
        if self.kind.uses_dual_average() {
            if self.gbar.is_empty() {
                self.gbar = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            }
            if self.gbar.len() != params.len() {
                bail!(State, "optimizer tracks {} parameters, got {}", self.gbar.len(), params.len());
            }
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad.shape() != p.value.shape() {
                bail!(Dimension, "gradient of {} has shape {:?}, value {:?}", p.name, p.grad.shape(), p.value.shape());
            }
            if let Some(avg) = self.gbar.get(i) {
                if avg.shape() != p.value.shape() {
                    bail!(
                        Dimension,
                        "running average of {} has shape {:?}, value {:?}",
                        p.name,
                        avg.shape(),
                        p.value.shape()
                    );
                }
            }
        }

        let eta = T::c(self.step_size());
        let xi_t = T::c(xi(t, self.alpha));
        for (i, p) in params.iter_mut().enumerate() {
            let lambda = if p.regularized { T::c(self.lambda) } else { T::zero() };
            let Parameter { value, grad, .. } = p;
            let (w, g) = (value.data_mut(), grad.data());
            match self.kind {
                OptimizerKind::Sgd => sgd_update(w, g, eta),
                OptimizerKind::ProxSgd => prox_sgd_update(w, g, eta, lambda),
                OptimizerKind::SdaPerturbed => sda_perturbed_update(w, g, T::c(epsilon(t)), eta),
                OptimizerKind::SdaAveraged | OptimizerKind::Rda => {
                    let avg = self.gbar[i].data_mut();
                    dual_average_update(avg, g, t);
                    if self.kind == OptimizerKind::Rda {
                        rda_primal(w, avg, xi_t, lambda);
                    } else {
                        sda_primal(w, avg, xi_t);
                    }
                }
            }
        }
        self.t += 1;
        Ok(())
    }
}

fn check_hyper(alpha: f64, lambda: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        bail!(Config, "alpha must be positive, got {}", alpha);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        bail!(Config, "lambda must be nonnegative, got {}", lambda);
    }
    Ok(())
}

/// Switch `opt` to the `(α, λ)` active at `epoch`; `t` and `ḡ` are kept.
pub fn apply_hyper_schedule<T: Scalar>(schedule: &HyperSchedule, epoch: usize, opt: &mut Optimizer<T>) -> Result<()> {
    let (alpha, lambda) = schedule.at(epoch)?;
    opt.set_hyper(alpha, lambda)
}
