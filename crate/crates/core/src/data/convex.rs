use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::optim::soft;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexKind {
    /// `f(w, z) = ½(aᵀw − y)²`.
    LeastSquares,
    /// `f(w, z) = log(1 + exp(−y·aᵀw))` with `y ∈ {−1, +1}`.
    Logistic,
}

/// `φ(w) = (1/n)·Σᵢ f(w, zᵢ) + λ‖w‖₁` over a dense design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProblem<T = f64> {
    a: Tensor<T>,
    y: Vec<T>,
    pub kind: ConvexKind,
    pub lambda: f64,
    pub seed: u64,
    w_true: Vec<T>,
}

/// Gaussian design, `±1` planted coefficients on a random support.
fn planted(n: usize, d: usize, support_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(support_fraction > 0.0 && support_fraction <= 1.0) {
        bail!(Config, "support fraction must lie in (0, 1], got {}", support_fraction);
    }
    if n == 0 || d == 0 {
        bail!(Config, "problem needs at least one sample and one feature");
    }
    let a: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    let k = (support_fraction * d as f64).ceil() as usize;
    let mut w = vec![0.0; d];
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut support = rand::seq::index::sample(rng, d, k).into_vec();
    support.sort_unstable();
    for i in support {
        w[i] = if coin.sample(rng) { 1.0 } else { -1.0 };
    }
    Ok((a, w))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares problem `y = Aw° + noise`; `λ` starts at 0.
pub fn make_synthetic_lasso<T: Scalar>(
    n: usize,
    d: usize,
    support_fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<ConvexProblem<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, w) = planted(n, d, support_fraction, &mut rng)?;
    let y = a
        .chunks_exact(d)
        .map(|row| {
            let e: f64 = StandardNormal.sample(&mut rng);
            dot(row, &w) + noise_sd * e
        })
        .collect();
    ConvexProblem::from_parts(n, d, a, y, w, ConvexKind::LeastSquares, seed)
}

/// Logistic problem with labels `sgn(aᵀw° + noise)`; `λ` starts at 0.
pub fn make_synthetic_logistic<T: Scalar>(
    n: usize,
    d: usize,
    support_fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<ConvexProblem<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, w) = planted(n, d, support_fraction, &mut rng)?;
    let y = a
        .chunks_exact(d)
        .map(|row| {
            let e: f64 = StandardNormal.sample(&mut rng);
            if dot(row, &w) + noise_sd * e >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    ConvexProblem::from_parts(n, d, a, y, w, ConvexKind::Logistic, seed)
}

impl<T: Scalar> ConvexProblem<T> {
    fn from_parts(
        n: usize,
        d: usize,
        a: Vec<f64>,
        y: Vec<f64>,
        w: Vec<f64>,
        kind: ConvexKind,
        seed: u64,
    ) -> Result<Self> {
        let a = Tensor::from_vec(&[n, d], a.into_iter().map(T::c).collect())?;
        Ok(ConvexProblem {
            a,
            y: y.into_iter().map(T::c).collect(),
            kind,
            lambda: 0.0,
            seed,
            w_true: w.into_iter().map(T::c).collect(),
        })
    }

    /// A problem over an explicit design; `w_true` may be empty if unknown.
    pub fn new(a: Tensor<T>, y: Vec<T>, kind: ConvexKind, lambda: f64) -> Result<Self> {
        if a.ndim() != 2 || a.shape()[0] != y.len() {
            bail!(Dimension, "design {:?} does not match {} targets", a.shape(), y.len());
        }
        if !(lambda >= 0.0) {
            bail!(Config, "lambda must be nonnegative, got {}", lambda);
        }
        Ok(ConvexProblem { a, y, kind, lambda, seed: 0, w_true: Vec::new() })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            bail!(Config, "lambda must be nonnegative, got {}", lambda);
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn design(&self) -> &Tensor<T> {
        &self.a
    }

    pub fn targets(&self) -> &[T] {
        &self.y
    }

    /// Planted coefficients `w°`.
    pub fn w_true(&self) -> &[T] {
        &self.w_true
    }

    /// Indices where `w°` is nonzero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.w_true.len()).filter(|&i| self.w_true[i] != T::zero()).collect()
    }

    fn row(&self, i: usize) -> &[T] {
        let d = self.d();
        &self.a.data()[i * d..(i + 1) * d]
    }

    fn check(&self, w: &[T]) -> Result<()> {
        if w.len() != self.d() {
            bail!(Dimension, "weight vector has {} entries, problem has {}", w.len(), self.d());
        }
        Ok(())
    }

    /// Margins `Aw` for all rows.
    fn predictions(&self, w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n()];
        gemm(
            T::one(),
            MatRef::new(self.a.data(), self.n(), self.d()),
            MatRef::new(w, self.d(), 1),
            T::zero(),
            &mut out,
        );
        out
    }

    fn loss_term(&self, margin: T, y: T) -> T {
        match self.kind {
            ConvexKind::LeastSquares => {
                let r = margin - y;
                T::c(0.5) * r * r
            }
            ConvexKind::Logistic => softplus(-y * margin),
        }
    }

    /// `∂f/∂margin` for one sample.
    fn loss_slope(&self, margin: T, y: T) -> T {
        match self.kind {
            ConvexKind::LeastSquares => margin - y,
            ConvexKind::Logistic => -y * sigmoid(-y * margin),
        }
    }

    /// Smooth part `(1/n)·Σᵢ f(w, zᵢ)`.
    pub fn smooth_value(&self, w: &[T]) -> Result<T> {
        self.check(w)?;
        let p = self.predictions(w);
        let total = p.iter().zip(&self.y).fold(T::zero(), |acc, (&m, &y)| acc + self.loss_term(m, y));
        Ok(total / T::c(self.n() as f64))
    }

    /// `φ(w)`.
    pub fn objective(&self, w: &[T]) -> Result<T> {
        let l1 = w.iter().fold(T::zero(), |acc, v| acc + v.abs());
        Ok(self.smooth_value(w)? + T::c(self.lambda) * l1)
    }

    /// Full gradient of the smooth part.
    pub fn smooth_grad(&self, w: &[T], out: &mut [T]) -> Result<()> {
        self.check(w)?;
        let n = self.n();
        let slopes: Vec<T> = self.predictions(w).iter().zip(&self.y).map(|(&m, &y)| self.loss_slope(m, y)).collect();
        let a = MatRef::new(self.a.data(), n, self.d());
        gemm(T::c(1.0 / n as f64), a.t(), MatRef::new(&slopes, n, 1), T::zero(), out);
        Ok(())
    }

    /// Mean gradient of the smooth part over the given rows.
    pub fn sample_grad(&self, w: &[T], rows: &[usize], out: &mut [T]) -> Result<()> {
        self.check(w)?;
        if rows.is_empty() {
            bail!(Argument, "minibatch is empty");
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        let scale = T::c(1.0 / rows.len() as f64);
        for &i in rows {
            if i >= self.n() {
                bail!(Index, "row {} outside {} samples", i, self.n());
            }
            let row = self.row(i);
            let margin = row.iter().zip(w).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let s = self.loss_slope(margin, self.y[i]) * scale;
            for (o, &a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
        }
        Ok(())
    }

    /// Estimate of the largest eigenvalue of `(1/n)·AᵀA` by power iteration,
    /// times `1/4` for the logistic loss: the Lipschitz constant of the
    /// smooth gradient.
    pub fn lipschitz(&self, iterations: usize) -> T {
        let (n, d) = (self.n(), self.d());
        let a = MatRef::new(self.a.data(), n, d);
        let mut v = vec![T::c(1.0 / (d as f64).sqrt()); d];
        let mut av = vec![T::zero(); n];
        let mut ev = T::zero();
        for _ in 0..iterations {
            gemm(T::one(), a, MatRef::new(&v, d, 1), T::zero(), &mut av);
            let mut next = vec![T::zero(); d];
            gemm(T::c(1.0 / n as f64), a.t(), MatRef::new(&av, n, 1), T::zero(), &mut next);
            let norm = next.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
            if norm == T::zero() {
                break;
            }
            ev = norm;
            v = next.into_iter().map(|x| x / norm).collect();
        }
        match self.kind {
            ConvexKind::LeastSquares => ev,
            ConvexKind::Logistic => ev * T::c(0.25),
        }
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Minimizer of a convex problem as certified by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution<T = f64> {
    pub w: Vec<T>,
    pub phi: T,
    /// Norm of the proximal-gradient mapping at `w`.
    pub residual: T,
    pub iterations: usize,
}

/// Power-iteration steps used to estimate the Lipschitz constant.
pub const POWER_ITERATIONS: usize = 50;
/// Relative safety margin on the estimated Lipschitz constant; power
/// iteration approaches the top eigenvalue from below.
pub const LIPSCHITZ_MARGIN: f64 = 1e-3;
pub const ORACLE_MAX_ITERATIONS: usize = 200_000;

/// Solve to `‖G(w)‖ ≤ tol` from `w = 0`; see [`convex_oracle_from`].
pub fn convex_oracle<T: Scalar>(problem: &ConvexProblem<T>, tol: f64) -> Result<OracleSolution<T>> {
    convex_oracle_from(problem, tol, &vec![T::zero(); problem.d()])
}

/// FISTA with gradient-based adaptive restart and step `1/L`, stopped once
/// the proximal-gradient mapping `G(w) = L·(w − prox(w − ∇f(w)/L))` at the
/// returned point has norm at most `tol`. The smooth part of the lasso is
/// `(1/2n)‖Aw − y‖²`, so the ℓ1 optimality conditions involve `λ` directly.
pub fn convex_oracle_from<T: Scalar>(problem: &ConvexProblem<T>, tol: f64, start: &[T]) -> Result<OracleSolution<T>> {
    if !(tol > 0.0) {
        bail!(Argument, "oracle tolerance must be positive, got {}", tol);
    }
    problem.check(start)?;
    let d = problem.d();
    let l = problem.lipschitz(POWER_ITERATIONS) * T::c(1.0 + LIPSCHITZ_MARGIN);
    if l == T::zero() {
        // zero design: the smooth part is constant and w = 0 is optimal
        let w = vec![T::zero(); d];
        return Ok(OracleSolution { phi: problem.objective(&w)?, w, residual: T::zero(), iterations: 0 });
    }
    let step = T::one() / l;
    let thr = T::c(problem.lambda) * step;
    let tol_t = T::c(tol);

    let prox_step = |point: &[T], grad: &mut [T], out: &mut [T]| -> Result<T> {
        problem.smooth_grad(point, grad)?;
        let mut norm2 = T::zero();
        for i in 0..d {
            out[i] = soft(point[i] - step * grad[i], thr);
            let g = l * (point[i] - out[i]);
            norm2 += g * g;
        }
        Ok(norm2.sqrt())
    };

    let mut x = start.to_vec();
    let mut y = x.clone();
    let mut next = vec![T::zero(); d];
    let mut grad = vec![T::zero(); d];
    let mut probe = vec![T::zero(); d];
    let mut theta = T::one();
    for it in 0..ORACLE_MAX_ITERATIONS {
        let at_y = prox_step(&y, &mut grad, &mut next)?;
        if !at_y.is_finite() {
            bail!(Oracle, "iterates diverged after {} steps", it);
        }
        if at_y <= tol_t {
            let residual = prox_step(&next, &mut grad, &mut probe)?;
            if residual <= tol_t {
                return Ok(OracleSolution { phi: problem.objective(&next)?, w: next, residual, iterations: it + 1 });
            }
        }
        // restart momentum when it points uphill
        let uphill = (0..d).fold(T::zero(), |acc, i| acc + (y[i] - next[i]) * (next[i] - x[i])) > T::zero();
        let theta_next = (T::one() + (T::one() + T::c(4.0) * theta * theta).sqrt()) * T::c(0.5);
        let beta = if uphill { T::zero() } else { (theta - T::one()) / theta_next };
        theta = if uphill { T::one() } else { theta_next };
        for i in 0..d {
            y[i] = next[i] + beta * (next[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut next);
    }
    bail!(Oracle, "proximal-gradient residual above {} after {} iterations", tol, ORACLE_MAX_ITERATIONS)
}
