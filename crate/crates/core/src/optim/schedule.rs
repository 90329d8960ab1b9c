use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// `α` and `λ` for the 1-based inclusive epoch range `[first, last]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRange {
    pub first: usize,
    pub last: usize,
    pub alpha: f64,
    pub lambda: f64,
}

/// Piecewise-constant hyperparameters over epochs.
///
/// Ranges must start at epoch 1, be contiguous and not overlap; the last
/// range may be open-ended by setting `last` to `usize::MAX`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<HyperRange>", into = "Vec<HyperRange>")]
pub struct HyperSchedule {
    ranges: Vec<HyperRange>,
}

impl HyperSchedule {
    pub fn new(ranges: Vec<HyperRange>) -> Result<Self> {
        if ranges.is_empty() {
            bail!(Config, "a hyperparameter schedule needs at least one range");
        }
        let mut next = 1;
        for r in &ranges {
            if r.first != next {
                bail!(Config, "schedule range starting at epoch {} should start at {}", r.first, next);
            }
            if r.last < r.first {
                bail!(Config, "schedule range [{}, {}] is empty", r.first, r.last);
            }
            if !(r.alpha > 0.0 && r.alpha.is_finite()) {
                bail!(Config, "alpha must be positive, got {}", r.alpha);
            }
            if !(r.lambda >= 0.0 && r.lambda.is_finite()) {
                bail!(Config, "lambda must be nonnegative, got {}", r.lambda);
            }
            next = r.last.saturating_add(1);
        }
        Ok(HyperSchedule { ranges })
    }

    /// One open-ended range.
    pub fn constant(alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![HyperRange { first: 1, last: usize::MAX, alpha, lambda }])
    }

    /// Consecutive ranges of the given lengths, e.g. `[(10, 0.1, 1e-5), (10, 0.05, 1e-5)]`.
    pub fn from_lengths(parts: &[(usize, f64, f64)]) -> Result<Self> {
        let mut first = 1;
        let mut ranges = Vec::with_capacity(parts.len());
        for &(len, alpha, lambda) in parts {
            if len == 0 {
                bail!(Config, "schedule ranges must span at least one epoch");
            }
            ranges.push(HyperRange { first, last: first + len - 1, alpha, lambda });
            first += len;
        }
        Self::new(ranges)
    }

    pub fn ranges(&self) -> &[HyperRange] {
        &self.ranges
    }

    /// Last epoch covered by the schedule.
    pub fn last_epoch(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.last)
    }

    /// `(α, λ)` active during `epoch` (1-based).
    pub fn at(&self, epoch: usize) -> Result<(f64, f64)> {
        match self.ranges.iter().find(|r| r.first <= epoch && epoch <= r.last) {
            Some(r) => Ok((r.alpha, r.lambda)),
            None => bail!(Config, "epoch {} is outside the schedule (1..={})", epoch, self.last_epoch()),
        }
    }
}

impl TryFrom<Vec<HyperRange>> for HyperSchedule {
    type Error = crate::Error;

    fn try_from(ranges: Vec<HyperRange>) -> Result<Self> {
        HyperSchedule::new(ranges)
    }
}

impl From<HyperSchedule> for Vec<HyperRange> {
    fn from(s: HyperSchedule) -> Self {
        s.ranges
    }
}
