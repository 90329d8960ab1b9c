use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{NormMode, RunningStats, Tape, Tensor, Var};

/// What a parameter tensor is inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

/// Which side of the `S(W·f(θ; x) + b)` split a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    /// `W` and `b` of the final linear layer feeding the softmax.
    Head,
    /// `θ`: everything in the feature extractor.
    Body,
}

/// A trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f64> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
    pub role: ParamRole,
    /// Number of inputs feeding one output unit (`k²c` for conv filters).
    pub fan_in: usize,
    /// Whether ℓ1 regularization, thresholding and sparsity counting apply.
    pub regularized: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, kind: ParamKind, role: ParamRole, fan_in: usize) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, kind, role, fan_in, regularized: kind == ParamKind::Weight }
    }

    /// A free-standing regularized vector, e.g. the weights of a convex problem.
    pub fn vector(name: impl Into<String>, values: Vec<T>) -> Result<Self> {
        let n = values.len();
        let value = Tensor::from_vec(&[n], values)?;
        Ok(Parameter::new(name, value, ParamKind::Weight, ParamRole::Body, n))
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Declarative description of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Linear { w: usize, b: usize },
    Conv2d { k: usize, b: usize, stride: usize, padding: usize },
    Relu,
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    MaxPool { size: usize },
    Flatten,
}

/// Output of [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// Input to the head, `f(θ; x)`.
    pub features: Var,
    /// Tape variable of every parameter, in registry order.
    pub params: Vec<Var>,
}

/// An ordered stack of layers ending in a linear softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f64> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    params: Vec<Parameter<T>>,
    norm_stats: Vec<RunningStats<T>>,
    classes: usize,
}

impl<T: Scalar> Model<T> {
    /// Validate shapes and allocate zero-valued parameters.
    ///
    /// `input_shape` is per sample, e.g. `[1, 28, 28]` or `[784]`.
    pub fn from_specs(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            bail!(Config, "a model needs at least one layer");
        }
        let Some(LayerSpec::Linear { .. }) = specs.last() else {
            bail!(Config, "the last layer must be the linear head");
        };
        if input_shape.is_empty() || input_shape.contains(&0) {
            bail!(Config, "invalid input shape {:?}", input_shape);
        }
        let head_index = specs.len() - 1;
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        let mut norm_stats = Vec::new();
        let mut classes = 0;

        for (i, spec) in specs.iter().enumerate() {
            let role = if i == head_index { ParamRole::Head } else { ParamRole::Body };
            match *spec {
                LayerSpec::Linear { inputs, outputs } => {
                    if shape.len() != 1 || shape[0] != inputs || outputs == 0 {
                        bail!(Dimension, "layer {}: linear({}→{}) on input {:?}", i, inputs, outputs, shape);
                    }
                    let w = params.len();
                    params.push(Parameter::new(
                        format!("linear{i}.weight"),
                        Tensor::zeros(&[outputs, inputs]),
                        ParamKind::Weight,
                        role,
                        inputs,
                    ));
                    params.push(Parameter::new(
                        format!("linear{i}.bias"),
                        Tensor::zeros(&[outputs]),
                        ParamKind::Bias,
                        role,
                        inputs,
                    ));
                    layers.push(Layer::Linear { w, b: w + 1 });
                    shape = vec![outputs];
                    classes = outputs;
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    if shape.len() != 3 || shape[0] != in_channels || out_channels == 0 || kernel == 0 || stride == 0 {
                        bail!(
                            Dimension,
                            "layer {}: conv({}→{}, k{}) on input {:?}",
                            i,
                            in_channels,
                            out_channels,
                            kernel,
                            shape
                        );
                    }
                    let (h, w) = (shape[1] + 2 * padding, shape[2] + 2 * padding);
                    if kernel > h || kernel > w {
                        bail!(Dimension, "layer {}: kernel {} collapses spatial size {:?}", i, kernel, shape);
                    }
                    let fan_in = kernel * kernel * in_channels;
                    let k = params.len();
                    params.push(Parameter::new(
                        format!("conv{i}.weight"),
                        Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                        ParamKind::Weight,
                        role,
                        fan_in,
                    ));
                    params.push(Parameter::new(
                        format!("conv{i}.bias"),
                        Tensor::zeros(&[out_channels]),
                        ParamKind::Bias,
                        role,
                        fan_in,
                    ));
                    layers.push(Layer::Conv2d { k, b: k + 1, stride, padding });
                    shape = vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1];
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::BatchNorm { channels } => {
                    if shape[0] != channels {
                        bail!(Dimension, "layer {}: batch-norm over {} channels on input {:?}", i, channels, shape);
                    }
                    let gamma = params.len();
                    params.push(Parameter::new(
                        format!("bn{i}.weight"),
                        Tensor::full(&[channels], T::one()),
                        ParamKind::NormScale,
                        role,
                        1,
                    ));
                    params.push(Parameter::new(
                        format!("bn{i}.bias"),
                        Tensor::zeros(&[channels]),
                        ParamKind::NormShift,
                        role,
                        1,
                    ));
                    layers.push(Layer::BatchNorm { gamma, beta: gamma + 1, stats: norm_stats.len() });
                    norm_stats.push(RunningStats::new(channels));
                }
                LayerSpec::MaxPool { size } => {
                    if shape.len() != 3 || size == 0 || shape[1] / size == 0 || shape[2] / size == 0 {
                        bail!(Dimension, "layer {}: max-pool {} collapses input {:?}", i, size, shape);
                    }
                    layers.push(Layer::MaxPool { size });
                    shape = vec![shape[0], shape[1] / size, shape[2] / size];
                }
                LayerSpec::Flatten => {
                    layers.push(Layer::Flatten);
                    shape = vec![shape.iter().product()];
                }
            }
        }
        Ok(Model { input_shape: input_shape.to_vec(), specs: specs.to_vec(), layers, params, norm_stats, classes })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn norm_stats(&self) -> &[RunningStats<T>] {
        &self.norm_stats
    }

    pub fn norm_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.norm_stats
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn num_regularized(&self) -> usize {
        self.params.iter().filter(|p| p.regularized).map(Parameter::numel).sum()
    }

    pub fn count_layers(&self, pred: impl Fn(&LayerSpec) -> bool) -> usize {
        self.specs.iter().filter(|s| pred(s)).count()
    }

    /// Set every trainable value to zero, including batch-norm scales.
    pub fn zero_parameters(&mut self) {
        for p in &mut self.params {
            p.value.fill(T::zero());
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Record a forward pass for a batch `x: [B, input_shape…]` (any
    /// shape with the right element count per sample is accepted).
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Tensor<T>, mode: NormMode) -> Result<ForwardPass> {
        let per_sample: usize = self.input_shape.iter().product();
        if !x.numel().is_multiple_of(per_sample) || x.shape()[0] * per_sample != x.numel() {
            bail!(Dimension, "input {:?} does not hold samples of shape {:?}", x.shape(), self.input_shape);
        }
        let mut shape = vec![x.shape()[0]];
        shape.extend_from_slice(&self.input_shape);
        let mut h = tape.constant(x.reshape(&shape)?);
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let mut features = h;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                features = h;
            }
            h = match *layer {
                Layer::Linear { w, b } => tape.linear(h, params[w], params[b])?,
                Layer::Conv2d { k, b, stride, padding } => tape.conv2d(h, params[k], params[b], stride, padding)?,
                Layer::Relu => tape.relu(h)?,
                Layer::BatchNorm { gamma, beta, stats } => {
                    tape.batch_norm(h, params[gamma], params[beta], &mut self.norm_stats[stats], mode)?
                }
                Layer::MaxPool { size } => tape.max_pool2d(h, size)?,
                Layer::Flatten => tape.flatten(h)?,
            };
        }
        Ok(ForwardPass { logits: h, features, params })
    }

    /// Mean cross-entropy on a batch; parameter gradients are overwritten.
    pub fn loss_and_grad(&mut self, x: Tensor<T>, labels: &[usize]) -> Result<T> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, x, NormMode::Train)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, labels)?;
        let mut grads = tape.backward(loss)?;
        for (p, v) in self.params.iter_mut().zip(&fwd.params) {
            match grads.take(*v) {
                Some(g) => p.grad = g,
                None => p.grad.fill(T::zero()),
            }
        }
        Ok(tape.value(loss).data()[0])
    }

    /// Logits in evaluation mode. Running statistics are left untouched.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let fwd = self.forward(&mut tape, x, NormMode::Eval)?;
        Ok(tape.value(fwd.logits).clone())
    }
}
