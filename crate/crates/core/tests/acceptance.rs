//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. Exits nonzero if any criterion fails. The MNIST criteria need
//! the four IDX files in `$SPARSE_RDA_MNIST` or `<workspace>/data/mnist`
//! and are reported as skipped when they are missing.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparse_rda::data::{convex_oracle, load_mnist};
use sparse_rda::harness::{
    build_model, compare_optimizers, convex_problem, run_convergence_study, run_experiment, run_experiment_with,
    ExperimentConfig, RunOptions, CHECKPOINT_FILE, METRICS_FILE, MNIST_DIR_ENV,
};
use sparse_rda::metrics::MetricsRecord;
use sparse_rda::models::{zero_output_check, Parameter};
use sparse_rda::optim::{epsilon, soft, Optimizer, OptimizerKind};
use sparse_rda::tensor::{grad_check, NormMode, RunningStats, Tape, Tensor, Var};
use sparse_rda::{Result, Tensor64};

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-4;
const GRAD_POINTS: usize = 10;
const SDA_STEPS: usize = 1000;
const SDA_DIM: usize = 50;
const SDA_TOL: f64 = 1e-8;
const EPSILON_T_MAX: u64 = 1_000_000;
const SLOPE_RANGE: (f64, f64) = (-0.7, -0.35);
const ORACLE_TOL: f64 = 1e-10;
const SPARSITY_RATIO: f64 = 2.0;
const RDA_ZERO_RECALL: f64 = 0.8;
const PROX_ZERO_RECALL: f64 = 0.2;
const CHANCE_TOP1: (f64, f64) = (8.0, 12.0);
const MNIST_TOP1: f64 = 97.0;
const MNIST_SPARSITY: f64 = 0.70;
const MNIST_BUDGET: Duration = Duration::from_secs(30 * 60);
const ASR_TOP1_DROP: f64 = 1.0;
const SCHEDULE_TOP1_GAP: f64 = 1.0;
const SOFT_SAMPLES: usize = 10_000;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: impl Display) -> Outcome {
    if ok {
        Outcome::Pass(detail.to_string())
    } else {
        Outcome::Fail(detail.to_string())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV).map_or_else(|| workspace().join("data/mnist"), PathBuf::from)
}

fn have_mnist() -> bool {
    let dir = mnist_dir();
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).exists() || dir.join(format!("{f}.gz")).exists())
}

/// A shipped config with the MNIST path pinned and outputs redirected.
fn shipped_config(name: &str, out_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let path = workspace().join("configs").join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| sparse_rda::Error::io(&path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if value["dataset"]["kind"] == "mnist" {
        value["dataset"]["path"] = serde_json::Value::String(mnist_dir().to_string_lossy().into_owned());
    }
    match out_dir {
        Some(dir) => value["out_dir"] = serde_json::Value::String(dir.to_string_lossy().into_owned()),
        None => {
            value.as_object_mut().expect("config object").remove("out_dir");
        }
    }
    ExperimentConfig::from_json(&value.to_string())
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sparse-rda-acceptance-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// ---------------------------------------------------------------- 1

type Build = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

struct GradCase {
    name: &'static str,
    shape: Vec<usize>,
    /// Inputs spaced apart so no finite-difference probe crosses a kink
    /// (ReLU at zero, a max-pool tie).
    spaced: bool,
    build: Build,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let u = Uniform::new(-1.0, 1.0).expect("range");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| u.sample(rng)).collect()).expect("shape")
}

fn spaced_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).expect("shape")
}

/// `Σ r ⊙ y` for a fixed random `r`, turning any op into a scalar whose
/// gradient touches every output.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, r: &Tensor64) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn grad_cases(rng: &mut ChaCha8Rng) -> Vec<GradCase> {
    let mut cases: Vec<GradCase> = Vec::new();
    let mut c = |name, shape: &[usize], spaced, build: Build| {
        cases.push(GradCase { name, shape: shape.to_vec(), spaced, build })
    };

    let (x, w, b) = (uniform_tensor(rng, &[3, 4]), uniform_tensor(rng, &[5, 4]), uniform_tensor(rng, &[5]));
    let r = uniform_tensor(rng, &[3, 5]);
    {
        let (w, b, r) = (w.clone(), b.clone(), r.clone());
        c(
            "linear/x",
            &[3, 4],
            false,
            Box::new(move |t, v| {
                let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                let y = t.linear(v, w, b)?;
                weighted_sum(t, y, &r)
            }),
        );
    }
    {
        let (x, b, r) = (x.clone(), b.clone(), r.clone());
        c(
            "linear/W",
            &[5, 4],
            false,
            Box::new(move |t, v| {
                let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                let y = t.linear(x, v, b)?;
                weighted_sum(t, y, &r)
            }),
        );
    }
    c(
        "linear/b",
        &[5],
        false,
        Box::new(move |t, v| {
            let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.linear(x, w, v)?;
            weighted_sum(t, y, &r)
        }),
    );

    for (stride, padding) in [(1, 1), (2, 0)] {
        let (x, k, b) =
            (uniform_tensor(rng, &[2, 2, 5, 5]), uniform_tensor(rng, &[3, 2, 3, 3]), uniform_tensor(rng, &[3]));
        let side = (5 + 2 * padding - 3) / stride + 1;
        let r = uniform_tensor(rng, &[2, 3, side, side]);
        let names = if stride == 1 {
            ["conv2d/x", "conv2d/K", "conv2d/b"]
        } else {
            ["conv2d-s2/x", "conv2d-s2/K", "conv2d-s2/b"]
        };
        {
            let (k, b, r) = (k.clone(), b.clone(), r.clone());
            c(
                names[0],
                &[2, 2, 5, 5],
                false,
                Box::new(move |t, v| {
                    let (k, b) = (t.constant(k.clone()), t.constant(b.clone()));
                    let y = t.conv2d(v, k, b, stride, padding)?;
                    weighted_sum(t, y, &r)
                }),
            );
        }
        {
            let (x, b, r) = (x.clone(), b.clone(), r.clone());
            c(
                names[1],
                &[3, 2, 3, 3],
                false,
                Box::new(move |t, v| {
                    let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                    let y = t.conv2d(x, v, b, stride, padding)?;
                    weighted_sum(t, y, &r)
                }),
            );
        }
        c(
            names[2],
            &[3],
            false,
            Box::new(move |t, v| {
                let (x, k) = (t.constant(x.clone()), t.constant(k.clone()));
                let y = t.conv2d(x, k, v, stride, padding)?;
                weighted_sum(t, y, &r)
            }),
        );
    }

    let r = uniform_tensor(rng, &[4, 6]);
    c(
        "relu",
        &[4, 6],
        true,
        Box::new(move |t, v| {
            let y = t.relu(v)?;
            weighted_sum(t, y, &r)
        }),
    );

    let r = uniform_tensor(rng, &[2, 3, 2, 2]);
    c(
        "max_pool2d",
        &[2, 3, 4, 4],
        true,
        Box::new(move |t, v| {
            let y = t.max_pool2d(v, 2)?;
            weighted_sum(t, y, &r)
        }),
    );

    for (mode, suffix) in [(NormMode::Train, "train"), (NormMode::Eval, "eval")] {
        let (x, g, b) = (uniform_tensor(rng, &[4, 3, 2, 2]), uniform_tensor(rng, &[3]), uniform_tensor(rng, &[3]));
        let r = uniform_tensor(rng, &[4, 3, 2, 2]);
        let stats = {
            let mut s = RunningStats::new(3);
            s.mean = vec![0.1, -0.2, 0.3];
            s.var = vec![0.5, 1.5, 2.0];
            s
        };
        let bn = move |t: &mut Tape<f64>, x: Var, g: Var, b: Var, r: &Tensor64, stats: &RunningStats<f64>| {
            let mut st = stats.clone();
            let y = t.batch_norm(x, g, b, &mut st, mode)?;
            weighted_sum(t, y, r)
        };
        let name = |p: &'static str| -> &'static str {
            match (suffix, p) {
                ("train", "x") => "batch_norm-train/x",
                ("train", "g") => "batch_norm-train/gamma",
                ("train", _) => "batch_norm-train/beta",
                (_, "x") => "batch_norm-eval/x",
                (_, "g") => "batch_norm-eval/gamma",
                _ => "batch_norm-eval/beta",
            }
        };
        {
            let (g, b, r, st) = (g.clone(), b.clone(), r.clone(), stats.clone());
            c(
                name("x"),
                &[4, 3, 2, 2],
                false,
                Box::new(move |t, v| {
                    let (g, b) = (t.constant(g.clone()), t.constant(b.clone()));
                    bn(t, v, g, b, &r, &st)
                }),
            );
        }
        {
            let (x, b, r, st) = (x.clone(), b.clone(), r.clone(), stats.clone());
            c(
                name("g"),
                &[3],
                false,
                Box::new(move |t, v| {
                    let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                    bn(t, x, v, b, &r, &st)
                }),
            );
        }
        c(
            name("b"),
            &[3],
            false,
            Box::new(move |t, v| {
                let (x, g) = (t.constant(x.clone()), t.constant(g.clone()));
                bn(t, x, g, v, &r, &stats)
            }),
        );
    }

    let r = uniform_tensor(rng, &[2, 12]);
    c(
        "flatten",
        &[2, 3, 2, 2],
        false,
        Box::new(move |t, v| {
            let y = t.flatten(v)?;
            weighted_sum(t, y, &r)
        }),
    );

    let labels = vec![3, 0, 9, 4];
    c("softmax_cross_entropy", &[4, 10], false, Box::new(move |t, v| t.softmax_cross_entropy(v, &labels)));

    let (other, r) = (uniform_tensor(rng, &[3, 4]), uniform_tensor(rng, &[3, 4]));
    {
        let (other, r) = (other.clone(), r.clone());
        c(
            "add",
            &[3, 4],
            false,
            Box::new(move |t, v| {
                let o = t.constant(other.clone());
                let y = t.add(v, o)?;
                weighted_sum(t, y, &r)
            }),
        );
    }
    c(
        "mul",
        &[3, 4],
        false,
        Box::new(move |t, v| {
            let o = t.constant(other.clone());
            let y = t.mul(o, v)?;
            weighted_sum(t, y, &r)
        }),
    );
    c(
        "mul/square",
        &[5],
        false,
        Box::new(|t, v| {
            let y = t.mul(v, v)?;
            t.sum(y)
        }),
    );
    cases
}

fn criterion_grad_check() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = grad_cases(&mut rng);
    let mut worst = (0.0f64, "");
    let mut failed = Vec::new();
    for case in &cases {
        for _ in 0..GRAD_POINTS {
            let point =
                if case.spaced { spaced_tensor(&mut rng, &case.shape) } else { uniform_tensor(&mut rng, &case.shape) };
            let err = grad_check(&case.build, &point, GRAD_EPS)?;
            if err > worst.0 {
                worst = (err, case.name);
            }
            if (err.is_nan() || err > GRAD_TOL) && !failed.contains(&case.name) {
                failed.push(case.name);
            }
        }
    }
    let detail = format!(
        "{} op inputs x {} points, worst relative error {:.2e} ({}), tolerance {:.0e}{}",
        cases.len(),
        GRAD_POINTS,
        worst.0,
        worst.1,
        GRAD_TOL,
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
    );
    Ok(verdict(failed.is_empty(), detail))
}

// ---------------------------------------------------------------- 2

fn criterion_sda_forms() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = SDA_DIM;
    let a = uniform_tensor(&mut rng, &[d + 10, d]);
    // Q = AᵀA/m + 0.1·I, b uniform: a well-conditioned quadratic ½wᵀQw − bᵀw
    let mut q = vec![0.0; d * d];
    for row in a.data().chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                q[i * d + j] += row[i] * row[j] / (d + 10) as f64;
            }
        }
    }
    for i in 0..d {
        q[i * d + i] += 0.1;
    }
    let b = uniform_tensor(&mut rng, &[d]).into_vec();
    let noise = Uniform::new(-0.5, 0.5).expect("range");
    let w1 = uniform_tensor(&mut rng, &[d]).into_vec();

    let mut averaged = vec![Parameter::vector("w", w1.clone())?];
    let mut perturbed = vec![Parameter::vector("w", w1)?];
    let mut oa = Optimizer::new(OptimizerKind::SdaAveraged, 2.0, 0.0)?;
    let mut op = Optimizer::new(OptimizerKind::SdaPerturbed, 2.0, 0.0)?;
    let grad = |w: &[f64], xi: &[f64], out: &mut [f64]| {
        for i in 0..d {
            out[i] = q[i * d..(i + 1) * d].iter().zip(w).map(|(q, w)| q * w).sum::<f64>() - b[i] + xi[i];
        }
    };
    let mut worst_ratio = 0.0f64;
    let mut worst_diff = 0.0f64;
    for _ in 0..SDA_STEPS {
        let xi: Vec<f64> = (0..d).map(|_| noise.sample(&mut rng)).collect();
        for (params, opt) in [(&mut averaged, &mut oa), (&mut perturbed, &mut op)] {
            let Parameter { value, grad: g, .. } = &mut params[0];
            grad(value.data(), &xi, g.data_mut());
            opt.step(params)?;
        }
        let (wa, wp) = (averaged[0].value.data(), perturbed[0].value.data());
        let diff = wa.iter().zip(wp).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
        let scale = 1.0 + wa.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst_diff = worst_diff.max(diff);
        worst_ratio = worst_ratio.max(diff / scale);
    }

    let mut eps_violations = 0u64;
    for t in 2..=EPSILON_T_MAX {
        // ε_t < 1/(2t−1)  ⇔  t + √(t²−t) > 2t − 1  ⇔  t² − t > (t − 1)²,
        // checked in integers and on the implemented ε_t
        let exact = t * t - t > (t - 1) * (t - 1);
        let float = epsilon(t) < 1.0 / (2 * t - 1) as f64;
        if !(exact && float) {
            eps_violations += 1;
        }
    }
    let ok = worst_ratio <= SDA_TOL && eps_violations == 0;
    Ok(verdict(
        ok,
        format!(
            "{SDA_STEPS} steps on a {d}-dim quadratic: max |w_avg - w_pert| = {worst_diff:.2e}, max ratio to (1 + |w|inf) {worst_ratio:.2e} (tolerance {SDA_TOL:.0e}); eps_t bound violations for t in [2, {EPSILON_T_MAX}]: {eps_violations}"
        ),
    ))
}

// ---------------------------------------------------------------- 3, 4

fn criterion_rate() -> Result<Outcome> {
    let cfg = shipped_config("lasso_converge.json", None)?;
    let report = run_convergence_study(&cfg)?;
    let (lo, hi) = SLOPE_RANGE;
    let ok = report.slope >= lo && report.slope <= hi && report.oracle_residual <= ORACLE_TOL;
    Ok(verdict(
        ok,
        format!(
            "log-gap vs log-t slope {:.4} over t in [{}, {}] (target [{lo}, {hi}]), alpha {:.3}, oracle residual {:.1e} after {} iterations",
            report.slope, report.window[0], report.window[1], report.run.alpha, report.oracle_residual, report.oracle_iterations
        ),
    ))
}

fn criterion_thresholds() -> Result<Outcome> {
    let cfg = shipped_config("lasso_compare.json", None)?;
    let rows = compare_optimizers(&cfg)?;
    let find = |name: &str| rows.iter().find(|r| r.optimizer == name).cloned();
    let (Some(rda), Some(prox)) = (find("rda"), find("prox_sgd")) else {
        return Ok(Outcome::Fail("lasso_compare.json must list rda and prox_sgd".into()));
    };
    // what a converged solver does with the same problem
    let problem = convex_problem(&cfg)?;
    let oracle = convex_oracle(&problem, cfg.convergence.oracle_tol)?;
    let truth = problem.w_true();
    let off: Vec<usize> = (0..problem.d()).filter(|&i| truth[i] == 0.0).collect();
    let oracle_recall = off.iter().filter(|&&i| oracle.w[i] == 0.0).count() as f64 / off.len() as f64;

    let (rr, pr) = (rda.true_zero_recall.unwrap_or(0.0), prox.true_zero_recall.unwrap_or(1.0));
    let ok = rda.sparsity >= SPARSITY_RATIO * prox.sparsity && rr >= RDA_ZERO_RECALL && pr <= PROX_ZERO_RECALL;
    Ok(verdict(
        ok,
        format!(
            "sparsity rda {:.3} vs prox_sgd {:.3} (need ratio >= {SPARSITY_RATIO}); true zeros zeroed: rda {:.3} (>= {RDA_ZERO_RECALL}), prox_sgd {:.3} (<= {PROX_ZERO_RECALL}), oracle {:.3}",
            rda.sparsity, prox.sparsity, rr, pr, oracle_recall
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_zero_init() -> Result<Outcome> {
    let cfg = shipped_config("mnist_zero_init.json", Some(&scratch_dir("zero-init")))?;
    let mut model = build_model::<f64>(&cfg.model)?;
    model.zero_parameters();
    let data = load_mnist::<f64>(mnist_dir())?;
    let rows: Vec<usize> = (0..cfg.train.batch_size).collect();
    let (x, labels) = data.train.batch(&rows)?;
    let probe = zero_output_check(&model, &x, &labels)?;
    let report = run_experiment(&cfg)?;
    let top1 = report.last().map_or(f64::NAN, |r| r.top1);
    let ok = probe.all() && top1 >= CHANCE_TOP1.0 && top1 <= CHANCE_TOP1.1;
    Ok(verdict(
        ok,
        format!(
            "output zero {}, head weight grad zero {}, body grads zero {}; TOP-1 after {} epochs from zero {:.2}% (target [{}, {}])",
            probe.output_zero, probe.head_grad_zero, probe.body_grad_zero, cfg.train.epochs, top1, CHANCE_TOP1.0, CHANCE_TOP1.1
        ),
    ))
}

// ---------------------------------------------------------------- 6, 7, 10

struct MnistRun {
    records: Vec<MetricsRecord>,
    elapsed: Duration,
    epochs: usize,
}

fn mnist_run(config: &str) -> Result<MnistRun> {
    let cfg = shipped_config(config, Some(&scratch_dir(config.trim_end_matches(".json"))))?;
    let start = Instant::now();
    let report = run_experiment(&cfg)?;
    Ok(MnistRun { records: report.records, elapsed: start.elapsed(), epochs: cfg.train.epochs })
}

fn criterion_mnist(run: &MnistRun) -> Outcome {
    let last = run.records.last().expect("records");
    let ok = last.top1 >= MNIST_TOP1 && last.sparsity >= MNIST_SPARSITY && run.elapsed <= MNIST_BUDGET;
    verdict(
        ok,
        format!(
            "final TOP-1 {:.2}% (>= {MNIST_TOP1}), sparsity {:.4} (>= {MNIST_SPARSITY}), {:.1} min (<= {})",
            last.top1,
            last.sparsity,
            run.elapsed.as_secs_f64() / 60.0,
            MNIST_BUDGET.as_secs() / 60
        ),
    )
}

fn criterion_asr(run: &MnistRun) -> Outcome {
    let phase1 = run.records.iter().rfind(|r| r.phase == 1).expect("phase 1");
    let trace: Vec<f64> = std::iter::once(phase1.sparsity)
        .chain(run.records.iter().filter(|r| r.phase == 2).map(|r| r.sparsity))
        .collect();
    if trace.len() < 2 {
        return Outcome::Fail("no retraining epochs in the run".into());
    }
    let monotone = trace.windows(2).all(|w| w[1] >= w[0]);
    let last = run.records.last().expect("records");
    let ok = monotone && last.top1 >= phase1.top1 - ASR_TOP1_DROP;
    verdict(
        ok,
        format!(
            "sparsity over retraining {:.4} -> {:.4} ({}), TOP-1 {:.2}% after phase 1, {:.2}% after retraining (allowed drop {ASR_TOP1_DROP})",
            trace[0],
            trace[trace.len() - 1],
            if monotone { "non-decreasing" } else { "DECREASES" },
            phase1.top1,
            last.top1
        ),
    )
}

fn criterion_schedule(constant: &MnistRun, scheduled: &MnistRun) -> Outcome {
    let epochs = scheduled.epochs;
    let Some(c) = constant.records.iter().find(|r| r.epoch == epochs && r.phase == 1) else {
        return Outcome::Fail(format!("constant-alpha run has no phase-1 record at epoch {epochs}"));
    };
    let s = scheduled.records.last().expect("records");
    let ok = s.epoch == epochs && s.sparsity >= c.sparsity && (s.top1 - c.top1).abs() <= SCHEDULE_TOP1_GAP;
    verdict(
        ok,
        format!(
            "after {epochs} epochs: decreasing alpha sparsity {:.4}, TOP-1 {:.2}%; constant alpha sparsity {:.4}, TOP-1 {:.2}% (allowed TOP-1 gap {SCHEDULE_TOP1_GAP})",
            s.sparsity, s.top1, c.sparsity, c.top1
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_soft() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // dyadic inputs k·2⁻²⁰ keep every subtraction exact, so the identities
    // hold with == rather than up to rounding
    let grid = Uniform::new_inclusive(-(1i64 << 40), 1i64 << 40).expect("range");
    let scale = (1u64 << 20) as f64;
    let mut bad = [0usize; 4];
    for _ in 0..SOFT_SAMPLES {
        let x = grid.sample(&mut rng) as f64 / scale;
        let y = grid.sample(&mut rng) as f64 / scale;
        let d = (grid.sample(&mut rng) as f64 / scale).abs();
        if (soft(x, d) - soft(y, d)).abs() > (x - y).abs() {
            bad[0] += 1;
        }
        if soft(-x, d) != -soft(x, d) {
            bad[1] += 1;
        }
        let s = soft(x, d);
        if s.abs() > x.abs() || (s != 0.0 && s.signum() != x.signum()) || (x.abs() <= d && s != 0.0) {
            bad[2] += 1;
        }
        if soft(x, 0.0).to_bits() != x.to_bits() {
            bad[3] += 1;
        }
    }
    verdict(
        bad.iter().all(|&b| b == 0),
        format!(
            "{SOFT_SAMPLES} inputs, violations: nonexpansive {}, odd {}, shrinking {}, zero-threshold identity {}",
            bad[0], bad[1], bad[2], bad[3]
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_determinism() -> Result<Outcome> {
    let (a, b, c) = (scratch_dir("det-a"), scratch_dir("det-b"), scratch_dir("det-resume"));
    let first = shipped_config("mnist_smoke.json", Some(&a))?;
    run_experiment(&first)?;
    run_experiment(&shipped_config("mnist_smoke.json", Some(&b))?)?;
    let read =
        |d: &Path| std::fs::read(d.join(METRICS_FILE)).map_err(|e| sparse_rda::Error::io(d.join(METRICS_FILE), e));
    let same_jsonl = read(&a)? == read(&b)?;

    // interrupt in phase 1 and again inside retraining
    let resumed = shipped_config("mnist_smoke.json", Some(&c))?;
    let total = resumed.train.epochs + resumed.train.asr_epochs;
    let stops = [resumed.train.epochs - 1, total - 1];
    run_experiment_with(&resumed, &RunOptions { resume: None, stop_after: Some(stops[0]) })?;
    run_experiment_with(&resumed, &RunOptions { resume: Some(c.join(CHECKPOINT_FILE)), stop_after: Some(stops[1]) })?;
    let report =
        run_experiment_with(&resumed, &RunOptions { resume: Some(c.join(CHECKPOINT_FILE)), stop_after: None })?;
    let reference = sparse_rda::harness::read_records(&a.join(METRICS_FILE))?;
    let same_final = report.last() == reference.last();
    let same_trace = read(&c)? == read(&a)?;
    Ok(verdict(
        same_jsonl && same_final && same_trace,
        format!(
            "repeated runs give identical JSONL: {same_jsonl}; resumed after epochs {} and {} of {total}: final metrics equal {same_final}, JSONL equal {same_trace}",
            stops[0], stops[1]
        ),
    ))
}

// ---------------------------------------------------------------- report

fn main() {
    sparse_rda::alloc::keep_freed_buffers();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut record = |id: u8, name: &'static str, out: Result<Outcome>| {
        let out = out.unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let (tag, detail) = match &out {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} [{tag}] {name}: {detail}");
        results.push((id, name, out));
    };

    record(1, "gradient correctness", criterion_grad_check());
    record(2, "averaged and perturbed SDA agree", criterion_sda_forms());
    record(3, "convergence rate on lasso", criterion_rate());
    record(4, "constant vs decaying threshold", criterion_thresholds());
    record(8, "soft-threshold algebra", Ok(criterion_soft()));

    if have_mnist() {
        record(9, "determinism and resume", criterion_determinism());
        record(5, "zero initialization trap", criterion_zero_init());
        match mnist_run("mnist_rda.json") {
            Ok(run) => {
                record(6, "MNIST sparsity and accuracy", Ok(criterion_mnist(&run)));
                record(7, "adaptive sparse retraining", Ok(criterion_asr(&run)));
                let scheduled = mnist_run("mnist_schedule.json");
                record(10, "decreasing alpha schedule", scheduled.map(|s| criterion_schedule(&run, &s)));
            }
            Err(e) => {
                let msg = format!("reference run failed: {e}");
                record(6, "MNIST sparsity and accuracy", Ok(Outcome::Fail(msg.clone())));
                record(7, "adaptive sparse retraining", Ok(Outcome::Fail(msg.clone())));
                record(10, "decreasing alpha schedule", Ok(Outcome::Fail(msg)));
            }
        }
    } else {
        let why = format!("MNIST not found in {} (see scripts/fetch_mnist.sh)", mnist_dir().display());
        for (id, name) in [
            (9, "determinism and resume"),
            (5, "zero initialization trap"),
            (6, "MNIST sparsity and accuracy"),
            (7, "adaptive sparse retraining"),
            (10, "decreasing alpha schedule"),
        ] {
            record(id, name, Ok(Outcome::Skip(why.clone())));
        }
    }

    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("sparse-rda-acceptance-{}", std::process::id())));
    let failed: Vec<u8> = results.iter().filter(|r| matches!(r.2, Outcome::Fail(_))).map(|r| r.0).collect();
    let passed = results.iter().filter(|r| matches!(r.2, Outcome::Pass(_))).count();
    let skipped = results.iter().filter(|r| matches!(r.2, Outcome::Skip(_))).count();
    println!("acceptance: {passed} passed, {} failed, {skipped} skipped", failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
