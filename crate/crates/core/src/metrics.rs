//! Sparsity, accuracy, objective values and convergence traces.

use serde::{Deserialize, Serialize};

use crate::data::{ConvexProblem, LabeledDataset};
use crate::error::{bail, Result};
use crate::models::{Model, Parameter};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tensor};

/// Exact-zero counts over regularized weights and over all parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    pub zeros: usize,
    pub total: usize,
    /// `zeros / total` over regularized weights; the figure reported everywhere.
    pub ratio: f64,
    pub zeros_all: usize,
    pub total_all: usize,
    /// The same ratio with biases and batch-norm terms included.
    pub ratio_all: f64,
}

pub fn sparsity<T: Scalar>(params: &[Parameter<T>]) -> Sparsity {
    let zeros_in = |p: &Parameter<T>| p.value.data().iter().filter(|v| **v == T::zero()).count();
    let (mut zeros, mut total, mut zeros_all, mut total_all) = (0, 0, 0, 0);
    for p in params {
        let z = zeros_in(p);
        zeros_all += z;
        total_all += p.numel();
        if p.regularized {
            zeros += z;
            total += p.numel();
        }
    }
    let ratio = |z: usize, n: usize| if n == 0 { 0.0 } else { z as f64 / n as f64 };
    Sparsity { zeros, total, ratio: ratio(zeros, total), zeros_all, total_all, ratio_all: ratio(zeros_all, total_all) }
}

/// Percentage of rows whose label is among the `k` largest logits, ties
/// going to the lower class index.
pub fn top_k_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let hits = top_k_hits(logits, labels, k)?;
    Ok(if labels.is_empty() { 0.0 } else { 100.0 * hits as f64 / labels.len() as f64 })
}

fn top_k_hits<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        bail!(Dimension, "logits {:?} do not match {} labels", logits.shape(), labels.len());
    }
    let classes = logits.shape()[1];
    if k == 0 || k > classes {
        bail!(Argument, "k = {} must lie in 1..={}", k, classes);
    }
    let mut hits = 0;
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            bail!(Index, "label {} outside {} classes", label, classes);
        }
        let target = row[label];
        // classes ranked strictly ahead of the label
        let ahead = row.iter().enumerate().filter(|&(c, &v)| v > target || (v == target && c < label)).count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Loss and accuracy of a classifier over a whole dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Evaluate `model` on `data` in inference mode, `batch` samples at a time.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &LabeledDataset<T>, batch: usize) -> Result<Evaluation> {
    let n = data.len();
    if n == 0 {
        bail!(Argument, "cannot evaluate on an empty dataset");
    }
    let classes = model.classes();
    let k5 = classes.min(5);
    let (mut loss, mut hit1, mut hit5) = (0.0, 0, 0);
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1)).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let (x, y) = data.batch(&rows)?;
        let logits = model.predict(x)?;
        let (l, _) = kernels::softmax_cross_entropy(logits.data(), &y, classes)?;
        loss += l.to_f64_lossless() * (end - start) as f64;
        hit1 += top_k_hits(&logits, &y, 1)?;
        hit5 += top_k_hits(&logits, &y, k5)?;
        start = end;
    }
    let pct = |h: usize| 100.0 * h as f64 / n as f64;
    Ok(Evaluation { loss: loss / n as f64, top1: pct(hit1), top5: pct(hit5) })
}

/// `φ(w)` of a convex problem at its own `λ`.
pub fn objective<T: Scalar>(problem: &ConvexProblem<T>, w: &[T]) -> Result<T> {
    problem.objective(w)
}

/// One line of training output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// 1 for the main run, 2 for adaptive sparse retraining.
    pub phase: u8,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub sparsity: f64,
    pub sparsity_all: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Wall-clock seconds spent on the epoch; not part of the deterministic
    /// output and omitted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,top1,top5,sparsity,alpha,lambda";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.loss, self.top1, self.top5, self.sparsity, self.alpha, self.lambda
        )
    }
}

/// Running average iterate `w̄_t = (1/t)·Σ w_τ` and the optimality gap
/// `φ(w̄_t) − φ*` sampled at roughly logarithmically spaced `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace<T = f64> {
    pub phi_star: f64,
    /// Recorded `(t, gap)` pairs.
    pub points: Vec<(u64, f64)>,
    wbar: Vec<T>,
    t: u64,
    next_record: u64,
    growth: f64,
}

impl<T: Scalar> ConvergenceTrace<T> {
    /// `points_per_decade` controls the spacing of recorded gaps.
    pub fn new(dim: usize, phi_star: f64, points_per_decade: usize) -> Self {
        let growth = 10f64.powf(1.0 / points_per_decade.max(1) as f64);
        ConvergenceTrace { phi_star, points: Vec::new(), wbar: vec![T::zero(); dim], t: 0, next_record: 1, growth }
    }

    pub fn average(&self) -> &[T] {
        &self.wbar
    }

    /// Number of iterates folded into the average.
    pub fn t(&self) -> u64 {
        self.t
    }
}

/// Fold iterate `w_t` into `w̄` (`w̄_t = ((t−1)·w̄_{t−1} + w_t)/t`) and
/// append the gap when `t` reaches the next log-spaced checkpoint.
pub fn record_convergence<T: Scalar>(
    trace: &mut ConvergenceTrace<T>,
    problem: &ConvexProblem<T>,
    t: u64,
    w: &[T],
) -> Result<()> {
    if t != trace.t + 1 {
        bail!(State, "expected iterate {}, got {}", trace.t + 1, t);
    }
    if w.len() != trace.wbar.len() {
        bail!(Dimension, "iterate has {} entries, trace tracks {}", w.len(), trace.wbar.len());
    }
    let keep = T::c((t - 1) as f64 / t as f64);
    let add = T::c(1.0 / t as f64);
    for (a, &v) in trace.wbar.iter_mut().zip(w) {
        *a = keep * *a + add * v;
    }
    trace.t = t;
    if t >= trace.next_record {
        let gap = problem.objective(&trace.wbar)?.to_f64_lossless() - trace.phi_star;
        trace.points.push((t, gap));
        trace.next_record = ((t as f64 * trace.growth).ceil() as u64).max(t + 1);
    }
    Ok(())
}

/// Least-squares slope of `log(gap)` against `log(t)` over recorded points
/// with `t` in `[t_min, t_max]`.
pub fn log_log_slope(points: &[(u64, f64)], t_min: u64, t_max: u64) -> Result<f64> {
    if t_min >= t_max {
        bail!(Config, "slope window [{}, {}] is empty", t_min, t_max);
    }
    let sel: Vec<(f64, f64)> =
        points.iter().filter(|(t, _)| (t_min..=t_max).contains(t)).map(|&(t, g)| ((t as f64).ln(), g.ln())).collect();
    if sel.len() < 2 {
        bail!(Config, "slope window [{}, {}] holds {} recorded points", t_min, t_max, sel.len());
    }
    if let Some(&(x, _)) = sel.iter().find(|(_, y)| !y.is_finite()) {
        bail!(Oracle, "non-positive gap at t = {:.0}; the oracle value is not tight enough", x.exp());
    }
    let n = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / n;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = sel.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = sel.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_lasso;

    #[test]
    fn sparsity_counts() {
        let mut w = Parameter::vector("w", vec![0.0, 1.0, 0.0, -2.0]).unwrap();
        let mut b = Parameter::vector("b", vec![0.0, 0.0]).unwrap();
        b.regularized = false;
        let s = sparsity(&[w.clone(), b.clone()]);
        assert_eq!((s.zeros, s.total, s.ratio), (2, 4, 0.5));
        assert_eq!((s.zeros_all, s.total_all), (4, 6));
        w.value.fill(0.0);
        assert_eq!(sparsity(&[w.clone()]).ratio, 1.0);
        w.value.fill(-0.0);
        assert_eq!(sparsity(&[w.clone()]).ratio, 1.0);
        w.value.fill(3.0);
        assert_eq!(sparsity(&[w.clone(), b]).ratio, 0.0);
    }

    #[test]
    fn top_k_examples() {
        let logits = Tensor::<f64>::from_f64(&[2, 2], &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(top_k_accuracy(&logits, &[0, 0], 1).unwrap(), 50.0);
        assert_eq!(top_k_accuracy(&logits, &[0, 0], 2).unwrap(), 100.0);
        assert_eq!(top_k_accuracy(&logits, &[0, 1], 1).unwrap(), 100.0);
        // ties go to the lower index
        let tied = Tensor::<f64>::from_f64(&[1, 3], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(top_k_accuracy(&tied, &[0], 1).unwrap(), 100.0);
        assert_eq!(top_k_accuracy(&tied, &[1], 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&tied, &[2], 2).unwrap(), 0.0);
        assert!(top_k_accuracy(&tied, &[0], 4).is_err());
        assert!(top_k_accuracy(&tied, &[0], 0).is_err());
    }

    #[test]
    fn csv_row_matches_header() {
        let r = MetricsRecord {
            epoch: 3,
            phase: 1,
            loss: 0.5,
            top1: 90.0,
            top5: 99.5,
            sparsity: 0.25,
            sparsity_all: 0.2,
            alpha: 0.1,
            lambda: 1e-6,
            seconds: None,
        };
        assert_eq!(r.csv_row(), "3,0.5,90,99.5,0.25,0.1,0.000001");
        assert_eq!(r.csv_row().split(',').count(), MetricsRecord::CSV_HEADER.split(',').count());
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("seconds"));
        assert_eq!(serde_json::from_str::<MetricsRecord>(&json).unwrap(), r);
    }

    #[test]
    fn running_average() {
        let p = make_synthetic_lasso::<f64>(10, 2, 0.5, 0.0, 0).unwrap();
        let mut tr = ConvergenceTrace::new(2, 0.0, 10);
        record_convergence(&mut tr, &p, 1, &[1.0, 3.0]).unwrap();
        record_convergence(&mut tr, &p, 2, &[2.0, 5.0]).unwrap();
        assert_eq!(tr.average(), &[1.5, 4.0]);
        assert!(record_convergence(&mut tr, &p, 4, &[0.0, 0.0]).is_err());

        let mut tr = ConvergenceTrace::new(2, 0.0, 10);
        for t in 1..=100 {
            record_convergence(&mut tr, &p, t, &[0.3, -0.7]).unwrap();
            assert!(tr.average().iter().zip([0.3, -0.7]).all(|(a, b)| (a - b).abs() < 1e-15));
        }
        let ts: Vec<u64> = tr.points.iter().map(|p| p.0).collect();
        assert_eq!(ts.first(), Some(&1));
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts.len() >= 15 && ts.len() <= 25, "{ts:?}");
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(u64, f64)> = (1..=50).map(|i| (i * 100, 3.0 * ((i * 100) as f64).powf(-0.5))).collect();
        assert!((log_log_slope(&pts, 100, 5000).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&pts, 100, 100).is_err());
        assert!(log_log_slope(&pts, 1, 99).is_err());
    }
}
