use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Model, ParamKind};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::RunningStats;

/// Bound of the uniform initialization for one layer: `b = √(s/n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub s: f64,
    pub fan_in: usize,
}

impl InitSpec {
    pub fn new(s: f64, fan_in: usize) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            bail!(Config, "initialization scale s must be positive, got {}", s);
        }
        if fan_in == 0 {
            bail!(Config, "fan-in must be at least 1");
        }
        Ok(InitSpec { s, fan_in })
    }

    pub fn bound(&self) -> f64 {
        (self.s / self.fan_in as f64).sqrt()
    }
}

/// Draw conv/linear weights and biases i.i.d. from `U(−√(s/n), √(s/n))`
/// with each layer's fan-in `n`; reset batch-norm to `γ = 1, β = 0`,
/// running mean 0 and running variance 1.
pub fn init_scaled_uniform<T: Scalar>(model: &mut Model<T>, s: f64, seed: u64) -> Result<()> {
    // validates s once even for models without weights
    InitSpec::new(s, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        match p.kind {
            ParamKind::Weight | ParamKind::Bias => {
                let b = InitSpec::new(s, p.fan_in)?.bound();
                let dist = Uniform::new_inclusive(-b, b).expect("finite positive bound");
                for v in p.value.data_mut() {
                    *v = T::c(dist.sample(&mut rng));
                }
            }
            ParamKind::NormScale => p.value.fill(T::one()),
            ParamKind::NormShift => p.value.fill(T::zero()),
        }
        p.grad.fill(T::zero());
    }
    for stats in model.norm_stats_mut() {
        *stats = RunningStats::new(stats.mean.len());
    }
    Ok(())
}
