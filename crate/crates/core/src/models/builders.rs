use serde::{Deserialize, Serialize};

use super::model::{LayerSpec, Model};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Alternating linear/ReLU stack over flat inputs of size `dims[0]`.
pub fn build_mlp<T: Scalar>(dims: &[usize], with_relu: bool) -> Result<Model<T>> {
    Model::from_specs(&[*dims.first().unwrap_or(&0)], &mlp_specs(dims, with_relu)?)
}

fn mlp_specs(dims: &[usize], with_relu: bool) -> Result<Vec<LayerSpec>> {
    if dims.len() < 2 {
        bail!(Config, "an MLP needs at least input and output sizes, got {:?}", dims);
    }
    let mut specs = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        if i > 0 && with_relu {
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Linear { inputs: pair[0], outputs: pair[1] });
    }
    Ok(specs)
}

/// Conv blocks, an optional max-pool, then a fully connected classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    /// Per-sample input `[channels, height, width]`.
    pub input: [usize; 3],
    /// Channel counts through the conv stack, starting with the input
    /// channels; `[1]` means no conv blocks.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Hidden widths and class count of the classifier; its input size is
    /// inferred.
    pub fc_dims: Vec<usize>,
    /// Batch-norm after every conv.
    #[serde(default)]
    pub batchnorm: bool,
    /// Batch-norm after every hidden fully connected layer.
    #[serde(default)]
    pub fc_batchnorm: bool,
    /// Max-pool window after the conv stack; 0 or 1 disables it.
    #[serde(default = "default_pool")]
    pub pool: usize,
}

fn default_pool() -> usize {
    2
}

impl CnnSpec {
    /// conv(1→8,k3)-ReLU-conv(8→16,k3)-ReLU-maxpool2-fc(2304→64)-ReLU-fc(64→10)
    pub fn mnist_reference() -> Self {
        CnnSpec {
            input: [1, 28, 28],
            channels: vec![1, 8, 16],
            kernel: 3,
            fc_dims: vec![64, 10],
            batchnorm: false,
            fc_batchnorm: false,
            pool: 2,
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let Some(&first) = self.channels.first() else {
            bail!(Config, "channel list must start with the input channel count");
        };
        if first != self.input[0] {
            bail!(Config, "first channel count {} does not match input {:?}", first, self.input);
        }
        if self.fc_dims.is_empty() {
            bail!(Config, "classifier needs at least the class count");
        }
        let mut specs = Vec::new();
        let (mut h, mut w) = (self.input[1], self.input[2]);
        for pair in self.channels.windows(2) {
            if self.kernel == 0 || self.kernel > h || self.kernel > w {
                bail!(Dimension, "kernel {} collapses a {}x{} feature map", self.kernel, h, w);
            }
            specs.push(LayerSpec::Conv2d {
                in_channels: pair[0],
                out_channels: pair[1],
                kernel: self.kernel,
                stride: 1,
                padding: 0,
            });
            if self.batchnorm {
                specs.push(LayerSpec::BatchNorm { channels: pair[1] });
            }
            specs.push(LayerSpec::Relu);
            h = h - self.kernel + 1;
            w = w - self.kernel + 1;
        }
        let has_conv = self.channels.len() > 1;
        if has_conv && self.pool > 1 {
            if h / self.pool == 0 || w / self.pool == 0 {
                bail!(Dimension, "max-pool {} collapses a {}x{} feature map", self.pool, h, w);
            }
            specs.push(LayerSpec::MaxPool { size: self.pool });
            h /= self.pool;
            w /= self.pool;
        }
        specs.push(LayerSpec::Flatten);
        let mut width = self.channels.last().copied().unwrap_or(1) * h * w;
        for (i, &out) in self.fc_dims.iter().enumerate() {
            specs.push(LayerSpec::Linear { inputs: width, outputs: out });
            if i + 1 < self.fc_dims.len() {
                if self.fc_batchnorm {
                    specs.push(LayerSpec::BatchNorm { channels: out });
                }
                specs.push(LayerSpec::Relu);
            }
            width = out;
        }
        Ok(specs)
    }
}

pub fn build_small_cnn<T: Scalar>(spec: &CnnSpec) -> Result<Model<T>> {
    Model::from_specs(&spec.input, &spec.layer_specs()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linears(specs: &[LayerSpec]) -> usize {
        specs.iter().filter(|s| matches!(s, LayerSpec::Linear { .. })).count()
    }

    #[test]
    fn mlp_examples() {
        let m = build_mlp::<f64>(&[784, 128, 10], true).unwrap();
        assert_eq!(linears(m.specs()), 2);
        assert_eq!(m.count_layers(|s| matches!(s, LayerSpec::Relu)), 1);
        assert_eq!(m.num_params(), 784 * 128 + 128 + 128 * 10 + 10);
        assert_eq!(m.num_params(), 101_770);

        let m = build_mlp::<f64>(&[2, 2], true).unwrap();
        assert_eq!(m.specs().len(), 1);
        let m = build_mlp::<f64>(&[4, 3, 3, 2], true).unwrap();
        assert_eq!(linears(m.specs()), 3);
        assert!(matches!(build_mlp::<f64>(&[], true), Err(crate::Error::Config(_))));
        assert!(matches!(build_mlp::<f64>(&[3], true), Err(crate::Error::Config(_))));
    }

    #[test]
    fn reference_cnn_shape_arithmetic() {
        let m = build_small_cnn::<f64>(&CnnSpec::mnist_reference()).unwrap();
        assert_eq!(m.classes(), 10);
        assert!(m.specs().contains(&LayerSpec::Linear { inputs: 16 * 12 * 12, outputs: 64 }));
        let conv = 8 * 9 + 8 + 16 * 72 + 16;
        let fc = 2304 * 64 + 64 + 64 * 10 + 10;
        assert_eq!(m.num_params(), conv + fc);
        assert_eq!(m.num_regularized(), 8 * 9 + 16 * 72 + 2304 * 64 + 640);
    }

    #[test]
    fn cnn_without_conv_blocks_is_an_mlp() {
        let spec = CnnSpec { channels: vec![1], fc_dims: vec![32, 10], ..CnnSpec::mnist_reference() };
        let m = build_small_cnn::<f64>(&spec).unwrap();
        assert!(m.specs().iter().all(|s| !matches!(s, LayerSpec::Conv2d { .. } | LayerSpec::MaxPool { .. })));
        assert!(m.specs().contains(&LayerSpec::Linear { inputs: 784, outputs: 32 }));
    }

    #[test]
    fn batchnorm_after_each_conv() {
        let spec = CnnSpec { batchnorm: true, ..CnnSpec::mnist_reference() };
        let specs = spec.layer_specs().unwrap();
        for (i, s) in specs.iter().enumerate() {
            if let LayerSpec::Conv2d { out_channels, .. } = s {
                assert_eq!(specs[i + 1], LayerSpec::BatchNorm { channels: *out_channels });
            }
        }
        assert_eq!(specs.iter().filter(|s| matches!(s, LayerSpec::BatchNorm { .. })).count(), 2);
    }

    #[test]
    fn spatial_collapse_is_rejected() {
        let spec = CnnSpec { input: [1, 4, 4], channels: vec![1, 2, 2, 2], ..CnnSpec::mnist_reference() };
        assert!(matches!(build_small_cnn::<f64>(&spec), Err(crate::Error::Dimension(_))));
    }
}
