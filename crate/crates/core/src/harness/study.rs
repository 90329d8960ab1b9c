use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlphaRule, DatasetConfig, ExperimentConfig, OptimizerConfig, StartPoint};
use super::experiment::run_experiment;
use crate::data::{convex_oracle, make_synthetic_lasso, make_synthetic_logistic, ConvexProblem, OracleSolution};
use crate::error::{bail, Result};
use crate::metrics::{log_log_slope, record_convergence, ConvergenceTrace};
use crate::models::Parameter;
use crate::optim::Optimizer;

/// Build the convex problem named by the dataset section, with `λ` from
/// the optimizer section.
pub fn convex_problem(cfg: &ExperimentConfig) -> Result<ConvexProblem<f64>> {
    let p = match &cfg.dataset {
        DatasetConfig::Lasso(s) => make_synthetic_lasso(s.n, s.d, s.support, s.noise, s.seed)?,
        DatasetConfig::Logistic(s) => make_synthetic_logistic(s.n, s.d, s.support, s.noise, s.seed)?,
        DatasetConfig::Mnist { .. } => bail!(Config, "convergence studies need a convex problem, not mnist"),
    };
    p.with_lambda(cfg.optimizer.lambda)
}

pub fn start_point(start: StartPoint, d: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(match start {
        StartPoint::Zero => vec![0.0; d],
        StartPoint::Uniform { scale } => {
            if !(scale > 0.0 && scale.is_finite()) {
                bail!(Config, "start scale must be positive, got {}", scale);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354_4152_5421);
            let u = Uniform::new_inclusive(-scale, scale).expect("valid range");
            (0..d).map(|_| u.sample(&mut rng)).collect()
        }
    })
}

/// `G/D` with `G` the RMS per-sample gradient norm at `w1` and
/// `D = ‖w*‖₂/√2`.
pub fn theory_alpha(problem: &ConvexProblem<f64>, w1: &[f64], w_star: &[f64]) -> Result<f64> {
    let d = problem.d();
    let mut g = vec![0.0; d];
    let mut sum = 0.0;
    for i in 0..problem.n() {
        problem.sample_grad(w1, &[i], &mut g)?;
        sum += g.iter().map(|v| v * v).sum::<f64>();
    }
    let big_g = (sum / problem.n() as f64).sqrt();
    let big_d = w_star.iter().map(|v| v * v).sum::<f64>().sqrt() / std::f64::consts::SQRT_2;
    if big_d == 0.0 || big_g == 0.0 {
        bail!(Config, "theory alpha is undefined when w* = 0 or the gradients vanish at w1");
    }
    Ok(big_g / big_d)
}

/// Outcome of one stochastic run on a convex problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexRun {
    pub optimizer: String,
    pub alpha: f64,
    pub lambda: f64,
    pub steps: u64,
    /// `(t, φ(w̄_t) − φ*)` at log-spaced `t`.
    pub gaps: Vec<(u64, f64)>,
    /// Gap of the final iterate `w_{T+1}` itself.
    pub final_gap: f64,
    /// Fraction of exactly-zero coordinates in the final iterate.
    pub sparsity: f64,
    /// Fraction of coordinates outside the planted support that are zero.
    pub true_zero_recall: f64,
    /// Fraction of the planted support that is nonzero.
    pub support_recall: f64,
    pub final_w: Vec<f64>,
}

/// Run one optimizer on `problem` from `w1`; minibatch rows are drawn
/// uniformly with replacement from `seed`, so runs sharing a seed see the
/// same samples.
#[allow(clippy::too_many_arguments)]
pub fn run_convex(
    problem: &ConvexProblem<f64>,
    oracle: &OracleSolution<f64>,
    opt: &mut Optimizer<f64>,
    w1: &[f64],
    steps: u64,
    batch: usize,
    seed: u64,
    points_per_decade: usize,
) -> Result<ConvexRun> {
    let (n, d) = (problem.n(), problem.d());
    let mut param = Parameter::vector("w", w1.to_vec())?;
    let mut trace = ConvergenceTrace::new(d, oracle.phi, points_per_decade);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = Uniform::new(0, n).expect("nonempty problem");
    let mut batch_rows = vec![0; batch.max(1)];
    for t in 1..=steps {
        record_convergence(&mut trace, problem, t, param.value.data())?;
        batch_rows.iter_mut().for_each(|r| *r = rows.sample(&mut rng));
        let Parameter { value, grad, .. } = &mut param;
        problem.sample_grad(value.data(), &batch_rows, grad.data_mut())?;
        opt.step(std::slice::from_mut(&mut param))?;
    }
    if !param.value.is_finite() {
        return Err(crate::Error::NonFinite { what: "convex iterate".into(), epoch: 0 });
    }
    let w = param.value.into_vec();
    let truth = problem.w_true();
    let zeros = w.iter().filter(|v| **v == 0.0).count();
    let off: Vec<usize> = (0..d).filter(|&i| truth.get(i).is_some_and(|v| *v == 0.0)).collect();
    let on: Vec<usize> = (0..d).filter(|&i| truth.get(i).is_some_and(|v| *v != 0.0)).collect();
    let frac = |idx: &[usize], pred: &dyn Fn(f64) -> bool| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().filter(|&&i| pred(w[i])).count() as f64 / idx.len() as f64
        }
    };
    Ok(ConvexRun {
        optimizer: opt.kind().name().to_string(),
        alpha: opt.alpha(),
        lambda: opt.lambda(),
        steps,
        gaps: trace.points.clone(),
        final_gap: problem.objective(&w)? - oracle.phi,
        sparsity: zeros as f64 / d as f64,
        true_zero_recall: frac(&off, &|v| v == 0.0),
        support_recall: frac(&on, &|v| v != 0.0),
        final_w: w,
    })
}

/// Result of [`run_convergence_study`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub phi_star: f64,
    pub oracle_residual: f64,
    pub oracle_iterations: usize,
    pub window: [u64; 2],
    /// Least-squares slope of `log(gap)` against `log(t)` over the window.
    pub slope: f64,
    pub run: ConvexRun,
}

fn make_optimizer(o: &OptimizerConfig, alpha: f64) -> Result<Optimizer<f64>> {
    Optimizer::new(o.kind, alpha, o.lambda)?.with_rate(o.learning_rate())
}

fn resolve_alpha(
    cfg: &ExperimentConfig,
    o: &OptimizerConfig,
    problem: &ConvexProblem<f64>,
    w1: &[f64],
    oracle: &OracleSolution<f64>,
) -> Result<f64> {
    match cfg.convergence.alpha_rule {
        AlphaRule::Fixed => Ok(o.alpha),
        AlphaRule::Theory => theory_alpha(problem, w1, &oracle.w),
    }
}

/// Run the configured optimizer on the convex problem and fit the rate at
/// which the averaged iterate's gap closes.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let c = &cfg.convergence;
    let problem = convex_problem(cfg)?;
    let oracle = convex_oracle(&problem, c.oracle_tol)?;
    let w1 = start_point(c.start, problem.d(), cfg.train.seed)?;
    let alpha = resolve_alpha(cfg, &cfg.optimizer, &problem, &w1, &oracle)?;
    let mut opt = make_optimizer(&cfg.optimizer, alpha)?;
    let run = run_convex(&problem, &oracle, &mut opt, &w1, c.steps, c.batch_size, cfg.train.seed, c.points_per_decade)?;
    let slope = log_log_slope(&run.gaps, c.window[0], c.window[1])?;
    Ok(ConvergenceReport {
        phi_star: oracle.phi,
        oracle_residual: oracle.residual,
        oracle_iterations: oracle.iterations,
        window: c.window,
        slope,
        run,
    })
}

/// One row of [`compare_optimizers`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub optimizer: String,
    pub alpha: f64,
    pub lambda: f64,
    pub sparsity: f64,
    /// MNIST only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    /// Convex problems only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_zero_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_gap: Option<f64>,
}

/// Run every entry of `cfg.compare` (or just `cfg.optimizer`) on the same
/// data, model, start point and seed.
pub fn compare_optimizers(cfg: &ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let entries = if cfg.compare.is_empty() { vec![cfg.optimizer.clone()] } else { cfg.compare.clone() };
    let mut rows = Vec::with_capacity(entries.len());
    if cfg.dataset.is_convex() {
        let c = &cfg.convergence;
        let problem = convex_problem(cfg)?;
        let oracle = convex_oracle(&problem, c.oracle_tol)?;
        let w1 = start_point(c.start, problem.d(), cfg.train.seed)?;
        for o in &entries {
            let problem = problem.clone().with_lambda(o.lambda)?;
            let alpha = resolve_alpha(cfg, o, &problem, &w1, &oracle)?;
            let oracle =
                if o.lambda == cfg.optimizer.lambda { oracle.clone() } else { convex_oracle(&problem, c.oracle_tol)? };
            let mut opt = make_optimizer(o, alpha)?;
            let run = run_convex(
                &problem,
                &oracle,
                &mut opt,
                &w1,
                c.steps,
                c.batch_size,
                cfg.train.seed,
                c.points_per_decade,
            )?;
            rows.push(ComparisonRow {
                optimizer: run.optimizer,
                alpha,
                lambda: o.lambda,
                sparsity: run.sparsity,
                top1: None,
                true_zero_recall: Some(run.true_zero_recall),
                final_gap: Some(run.final_gap),
            });
        }
    } else {
        for (i, o) in entries.iter().enumerate() {
            let mut sub = cfg.clone();
            sub.optimizer = o.clone();
            sub.compare.clear();
            sub.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("{}-{}", i, o.kind.name())));
            let report = run_experiment(&sub)?;
            let last = report.last().expect("epoch-0 record");
            rows.push(ComparisonRow {
                optimizer: o.kind.name().to_string(),
                alpha: last.alpha,
                lambda: last.lambda,
                sparsity: last.sparsity,
                top1: Some(last.top1),
                true_zero_recall: None,
                final_gap: None,
            });
        }
    }
    Ok(rows)
}

/// Plain-text table of comparison rows.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    let mut out = format!(
        "{:<14} {:>10} {:>10} {:>9} {:>8} {:>10} {:>11}\n",
        "optimizer", "alpha", "lambda", "sparsity", "top1", "zero_rec", "gap"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:>10.4} {:>10.2e} {:>9.4} {:>8} {:>10} {:>11}\n",
            r.optimizer,
            r.alpha,
            r.lambda,
            r.sparsity,
            opt(r.top1, 2),
            opt(r.true_zero_recall, 3),
            r.final_gap.map_or("-".to_string(), |g| format!("{g:.3e}"))
        ));
    }
    out
}
