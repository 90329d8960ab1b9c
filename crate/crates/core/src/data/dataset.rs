use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{load_idx, IdxArray};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inputs with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T = f64> {
    inputs: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
    /// Raw values were multiplied by this factor when loading.
    pub scale: f64,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.shape()[0] != labels.len() {
            bail!(Dimension, "{} inputs but {} labels", inputs.shape()[0], labels.len());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            bail!(Index, "label {} outside {} classes", bad, classes);
        }
        Ok(LabeledDataset { inputs, labels, classes, scale: 1.0 })
    }

    /// Images scaled to `[0, 1]` and their labels.
    pub fn from_idx(images: &IdxArray, labels: &IdxArray, classes: usize) -> Result<Self> {
        if images.shape.len() != 3 || labels.shape.len() != 1 {
            bail!(Format, "expected 3-D images and 1-D labels, got {:?} and {:?}", images.shape, labels.shape);
        }
        let scale = 1.0 / 255.0;
        let pixels = images.bytes.iter().map(|&b| T::c(b as f64 * scale)).collect();
        let mut shape = images.shape.clone();
        shape.insert(1, 1);
        let inputs = Tensor::from_vec(&shape, pixels)?;
        let labels = labels.bytes.iter().map(|&b| b as usize).collect();
        let mut ds = Self::new(inputs, labels, classes)?;
        ds.scale = scale;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of a single input.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let x = self.inputs.gather_outer(rows)?;
        Ok((x, rows.iter().map(|&r| self.labels[r]).collect()))
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let inputs = self.inputs.slice_outer(0, n)?;
        let mut ds = Self::new(inputs, self.labels[..n].to_vec(), self.classes)?;
        ds.scale = self.scale;
        Ok(ds)
    }

    /// Shuffled minibatches for one epoch; see [`minibatch_indices`].
    pub fn minibatches(&self, batch_size: usize, epoch_seed: u64) -> Result<Minibatches<'_, T>> {
        let order = minibatch_indices(self.len(), batch_size, epoch_seed)?;
        Ok(Minibatches { data: self, order: order.into_iter() })
    }
}

/// Row indices of each minibatch for one epoch: a seeded permutation cut
/// into chunks of `batch_size`, the last one possibly shorter.
pub fn minibatch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        bail!(Config, "batch size must be at least 1");
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub struct Minibatches<'a, T> {
    data: &'a LabeledDataset<T>,
    order: std::vec::IntoIter<Vec<usize>>,
}

impl<T: Scalar> Iterator for Minibatches<'_, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let rows = self.order.next()?;
        Some(self.data.batch(&rows).expect("indices come from a permutation of the dataset"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

/// Train and test splits of MNIST.
#[derive(Clone, Debug)]
pub struct Mnist<T = f64> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Load the four standard MNIST files (optionally gzipped) from `dir`.
pub fn load_mnist<T: Scalar>(dir: impl AsRef<Path>) -> Result<Mnist<T>> {
    let dir = dir.as_ref();
    let split = |prefix: &str| -> Result<LabeledDataset<T>> {
        let images = load_idx(find(dir, &format!("{prefix}-images-idx3-ubyte")))?;
        let labels = load_idx(find(dir, &format!("{prefix}-labels-idx1-ubyte")))?;
        LabeledDataset::from_idx(&images, &labels, 10)
    };
    Ok(Mnist { train: split("train")?, test: split("t10k")? })
}
