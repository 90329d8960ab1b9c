//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and whatever
//! its backward pass needs. Nodes only refer to earlier nodes, so the tape
//! is acyclic by construction and a single reverse sweep visits each node
//! once in reverse topological order.

use super::dense::Tensor;
use super::kernels::{self, BatchNormCache, ConvGeometry, RunningStats};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeometry, cols: kernels::ConvCols<T> },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BatchNormCache<T>, spatial: usize },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), record: true }
    }

    /// A tape that computes values only. Backward on it is an error; conv
    /// patches are not kept, which matters for large evaluation batches.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that is differentiated against (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that is held constant (data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.record && self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            bail!(State, "variable {} does not belong to this tape", v.0);
        }
        Ok(())
    }

    /// `y = x·Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            bail!(Dimension, "linear: x {:?}, W {:?}, b {:?}", xs, ws, bs);
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        let y =
            kernels::linear_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), batch, inp, out);
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&[batch, out], y)?, Op::Linear { x, w, b }, rg))
    }

    /// Cross-correlation of `x: [B, C, H, W]` with `K: [F, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        for v in [x, k, b] {
            self.check(v)?;
        }
        let (xs, ks, bs) = (self.value(x).shape(), self.value(k).shape(), self.value(b).shape());
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 || ks[1] != xs[1] || ks[2] != ks[3] || bs[0] != ks[0] {
            bail!(Dimension, "conv2d: x {:?}, K {:?}, b {:?}", xs, ks, bs);
        }
        let geom = ConvGeometry::new([xs[0], xs[1], xs[2], xs[3]], ks[0], ks[2], stride, padding)?;
        let rg = self.needs(x) || self.needs(k) || self.needs(b);
        let (y, cols) = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            self.record && rg,
        );
        let value = Tensor::from_vec(&geom.output_shape(), y)?;
        Ok(self.push(value, Op::Conv2d { x, k, b, geom, cols }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(kernels::relu);
        let rg = self.needs(x);
        Ok(self.push(y, Op::Relu { x }, rg))
    }

    /// Non-overlapping max-pooling with window and stride `size`.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).shape();
        if s.len() != 4 || size == 0 || s[2] < size || s[3] < size {
            bail!(Dimension, "max_pool2d({}) on {:?}", size, s);
        }
        let shape = [s[0], s[1], s[2], s[3]];
        let (y, argmax) = kernels::max_pool_forward(self.value(x).data(), shape, size);
        let value = Tensor::from_vec(&[s[0], s[1], s[2] / size, s[3] / size], y)?;
        let rg = self.needs(x);
        let argmax = if self.record { argmax } else { Vec::new() };
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Batch normalization over `[B, C]` or `[B, C, H, W]`. In train mode
    /// the running statistics are updated in place.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
    ) -> Result<Var> {
        for v in [x, gamma, beta] {
            self.check(v)?;
        }
        let s = self.value(x).shape().to_vec();
        if s.len() < 2 {
            bail!(Dimension, "batch_norm needs a channel axis, got {:?}", s);
        }
        let channels = s[1];
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels || stats.mean.len() != channels
        {
            bail!(Dimension, "batch_norm: {} channels but parameters of size {}", channels, self.value(gamma).numel());
        }
        let spatial: usize = s[2..].iter().product();
        let (y, cache) = kernels::batch_norm_forward(
            self.value(x).data(),
            s[0],
            channels,
            spatial,
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode == NormMode::Train,
        );
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Tensor::from_vec(&s, y)?, Op::BatchNorm { x, gamma, beta, cache, spatial }, rg))
    }

    /// Collapse all axes after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).shape();
        let rest: usize = s[1..].iter().product();
        let shape = [s[0], rest];
        self.reshape(x, &shape)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() {
            bail!(Dimension, "softmax_cross_entropy: logits {:?} for {} labels", s, labels.len());
        }
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits).data(), labels, s[1])?;
        let rg = self.needs(logits);
        let op = Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        Ok(self.push(y, Op::Sum { x }, rg))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            bail!(Dimension, "elementwise op on {:?} and {:?}", ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.record {
            bail!(State, "backward on an inference tape");
        }
        if self.nodes.is_empty() {
            bail!(State, "backward without a recorded forward pass");
        }
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            bail!(Dimension, "backward needs a scalar loss, got shape {:?}", self.value(loss).shape());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                }
                Op::Linear { x, w, b } => {
                    let xs = self.value(*x).shape();
                    let (batch, inp, out) = (xs[0], xs[1], self.value(*w).shape()[0]);
                    let (dx, dw, db) = kernels::linear_backward(
                        &dy,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        batch,
                        inp,
                        out,
                        self.nodes[x.0].requires_grad,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate_if(&mut grads, *w, dw);
                    self.accumulate_if(&mut grads, *b, db);
                }
                Op::Conv2d { x, k, b, geom, cols } => {
                    let (dx, dk, db) =
                        kernels::conv2d_backward(geom, &dy, cols, self.value(*k).data(), self.nodes[x.0].requires_grad);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate_if(&mut grads, *k, dk);
                    self.accumulate_if(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    let dx = dy.iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect();
                    self.accumulate_if(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    for (&g, &src) in dy.iter().zip(argmax) {
                        dx[src] += g;
                    }
                    self.accumulate_if(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, gamma, beta, cache, spatial } => {
                    let s = self.value(*x).shape();
                    let (dx, dgamma, dbeta) = kernels::batch_norm_backward(
                        &dy,
                        self.value(*x).data(),
                        cache,
                        s[0],
                        s[1],
                        *spatial,
                        self.value(*gamma).data(),
                    );
                    self.accumulate_if(&mut grads, *x, dx);
                    self.accumulate_if(&mut grads, *gamma, dgamma);
                    self.accumulate_if(&mut grads, *beta, dbeta);
                }
                Op::Reshape { x } => {
                    self.accumulate_if(&mut grads, *x, dy);
                }
                Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                    let classes = self.value(*logits).shape()[1];
                    let scale = dy[0] / T::c(labels.len() as f64);
                    let mut dx = probs.clone();
                    for (row, &label) in dx.chunks_exact_mut(classes).zip(labels) {
                        row[label] -= T::one();
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    self.accumulate_if(&mut grads, *logits, dx);
                }
                Op::Add { a, b } => {
                    self.accumulate_if(&mut grads, *a, dy.clone());
                    self.accumulate_if(&mut grads, *b, dy);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let da = dy.iter().zip(vb).map(|(&g, &v)| g * v).collect();
                    let db = dy.iter().zip(va).map(|(&g, &v)| g * v).collect();
                    self.accumulate_if(&mut grads, *a, da);
                    self.accumulate_if(&mut grads, *b, db);
                }
                Op::Sum { x } => {
                    let n = self.value(*x).numel();
                    self.accumulate_if(&mut grads, *x, vec![dy[0]; n]);
                }
            }
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            out.push(match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => Some(Tensor::from_vec(node.value.shape(), g)?),
                _ => None,
            });
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate_if(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if self.nodes[v.0].requires_grad {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: gradients of the differentiable leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter leaf. `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
