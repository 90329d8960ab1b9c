//! Forward and backward kernels on raw buffers.
//!
//! Reductions run left to right in a fixed order so repeated runs are
//! bitwise identical.

use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// `y[B×out] = x[B×in]·Wᵀ + b`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], batch: usize, inp: usize, out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * out];
    gemm(T::one(), MatRef::new(x, batch, inp), MatRef::new(w, out, inp).t(), T::zero(), &mut y);
    for row in y.chunks_exact_mut(out) {
        for (v, &bj) in row.iter_mut().zip(b) {
            *v += bj;
        }
    }
    y
}

/// Returns `(dx, dW, db)`; `dx` only when requested.
#[allow(clippy::type_complexity)]
pub fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    inp: usize,
    out: usize,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); out * inp];
    gemm(T::one(), MatRef::new(dy, batch, out).t(), MatRef::new(x, batch, inp), T::zero(), &mut dw);
    let mut db = vec![T::zero(); out];
    for row in dy.chunks_exact(out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); batch * inp];
        gemm(T::one(), MatRef::new(dy, batch, out), MatRef::new(w, out, inp), T::zero(), &mut dx);
        dx
    });
    (dx, dw, db)
}

/// Shape bookkeeping for a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], filters: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [batch, in_channels, height, width] = input;
        if stride == 0 || kernel == 0 {
            bail!(Dimension, "kernel and stride must be positive");
        }
        if kernel > height + 2 * padding || kernel > width + 2 * padding {
            bail!(Dimension, "kernel {} larger than padded input {}x{} (padding {})", kernel, height, width, padding);
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            filters,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    /// Rows of the unrolled patch matrix: `c·k·k`, the fan-in of one filter.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_height, self.out_width]
    }
}

/// Columns `j ∈ [lo, hi)` of an output row whose input column
/// `j·stride + kj − padding` falls inside the image.
fn valid_cols(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let (s, p) = (g.stride, g.padding);
    let lo = p.saturating_sub(kj).div_ceil(s).min(g.out_width);
    let hi = if g.width + p > kj { (g.width + p - kj).div_ceil(s).min(g.out_width) } else { 0 };
    (lo, hi.max(lo))
}

/// Append the unrolled patches of one image, `[C·k·k, OH·OW]` row-major.
fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut Vec<T>) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let zero = T::zero();
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_cols(g, kj);
                for oi in 0..g.out_height {
                    let ii = (oi * s + ki) as isize - p as isize;
                    if ii < 0 || ii >= g.height as isize {
                        cols.extend(std::iter::repeat_n(zero, g.out_width));
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    cols.extend(std::iter::repeat_n(zero, lo));
                    if s == 1 {
                        cols.extend_from_slice(&src[lo + kj - p..hi + kj - p]);
                    } else {
                        cols.extend((lo..hi).map(|oj| src[oj * s + kj - p]));
                    }
                    cols.extend(std::iter::repeat_n(zero, g.out_width - hi));
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let npix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_cols(g, kj);
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oi in 0..g.out_height {
                    let ii = (oi * s + ki) as isize - p as isize;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    let line = &src[oi * g.out_width + lo..oi * g.out_width + hi];
                    if s == 1 {
                        for (d, &v) in dst[lo + kj - p..hi + kj - p].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (oj, &v) in (lo..hi).zip(line) {
                            dst[oj * s + kj - p] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Samples per parallel work item. Fixed so that gradient sums are
/// reduced in the same order whatever the thread count.
const CONV_CHUNK: usize = 8;

/// Unrolled patches saved by the forward pass: one buffer per chunk of
/// `CONV_CHUNK` samples.
pub type ConvCols<T> = Vec<Vec<T>>;

/// Cross-correlation via per-sample im2col + GEMM.
///
/// Returns the output and the unrolled patches, which the backward pass
/// reuses. Pass `keep_cols = false` for inference.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    kernel: &[T],
    bias: &[T],
    keep_cols: bool,
) -> (Vec<T>, ConvCols<T>) {
    let in_len = g.in_channels * g.height * g.width;
    let (plen, npix) = (g.patch_len(), g.out_pixels());
    let out_len = g.filters * npix;
    let mut y = vec![T::zero(); g.batch * out_len];
    let kmat = MatRef::new(kernel, g.filters, plen);
    let saved: Vec<Vec<T>> = y
        .par_chunks_mut(out_len * CONV_CHUNK)
        .enumerate()
        .map(|(c, ys)| {
            let n = ys.len() / out_len;
            let mut cols = Vec::with_capacity(plen * npix * if keep_cols { n } else { 1 });
            for (i, yb) in ys.chunks_exact_mut(out_len).enumerate() {
                let b = c * CONV_CHUNK + i;
                if !keep_cols {
                    cols.clear();
                }
                let at = cols.len();
                im2col(g, &x[b * in_len..(b + 1) * in_len], &mut cols);
                for (f, plane) in yb.chunks_exact_mut(npix).enumerate() {
                    plane.fill(bias[f]);
                }
                gemm(T::one(), kmat, MatRef::new(&cols[at..], plen, npix), T::one(), yb);
            }
            if keep_cols {
                cols
            } else {
                Vec::new()
            }
        })
        .collect();
    (y, if keep_cols { saved } else { Vec::new() })
}

/// Returns `(dx, dK, db)`.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    dy: &[T],
    cols: &ConvCols<T>,
    kernel: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let in_len = g.in_channels * g.height * g.width;
    let (plen, npix) = (g.patch_len(), g.out_pixels());
    let out_len = g.filters * npix;
    let kmat = MatRef::new(kernel, g.filters, plen);
    let mut dx = want_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dx_chunks: Vec<Option<&mut [T]>> = match dx.as_mut() {
        Some(d) => d.chunks_mut(in_len * CONV_CHUNK).map(Some).collect(),
        None => (0..cols.len()).map(|_| None).collect(),
    };
    let partials: Vec<(Vec<T>, Vec<T>)> = dx_chunks
        .par_iter_mut()
        .zip(cols.par_iter())
        .enumerate()
        .map(|(c, (dxc, colsc))| {
            let mut dk = vec![T::zero(); g.filters * plen];
            let mut db = vec![T::zero(); g.filters];
            let mut dcols = vec![T::zero(); if want_dx { plen * npix } else { 0 }];
            for (i, colsb) in colsc.chunks_exact(plen * npix).enumerate() {
                let b = c * CONV_CHUNK + i;
                let dyb = &dy[b * out_len..(b + 1) * out_len];
                for (f, plane) in dyb.chunks_exact(npix).enumerate() {
                    let mut acc = T::zero();
                    for &v in plane {
                        acc += v;
                    }
                    db[f] += acc;
                }
                let dymat = MatRef::new(dyb, g.filters, npix);
                gemm(T::one(), dymat, MatRef::new(colsb, plen, npix).t(), T::one(), &mut dk);
                if let Some(dxc) = dxc.as_deref_mut() {
                    gemm(T::one(), kmat.t(), dymat, T::zero(), &mut dcols);
                    col2im_add(g, &dcols, &mut dxc[i * in_len..(i + 1) * in_len]);
                }
            }
            (dk, db)
        })
        .collect();
    let mut dk = vec![T::zero(); g.filters * plen];
    let mut db = vec![T::zero(); g.filters];
    for (pk, pb) in partials {
        dk.iter_mut().zip(pk).for_each(|(a, v)| *a += v);
        db.iter_mut().zip(pb).for_each(|(a, v)| *a += v);
    }
    (dx, dk, db)
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    // `max` may return -0.0 for a -0.0 input; this keeps relu(±0) = +0.
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Non-overlapping `size×size` max-pooling over `[B, C, H, W]`.
///
/// Returns the pooled values and, per output, the flat input index of the
/// first maximal element.
pub fn max_pool_forward<T: Scalar>(x: &[T], shape: [usize; 4], size: usize) -> (Vec<T>, Vec<usize>) {
    let [b, c, h, w] = shape;
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * size * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (oi * size + di) * w + oj * size + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics the batch-norm backward pass needs; `x̂` is
/// recomputed from the input rather than stored.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Batch normalization over `[B, C, spatial…]` with `spatial` elements per
/// channel and sample.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[T],
    beta: &[T],
    stats: &mut RunningStats<T>,
    train: bool,
) -> (Vec<T>, BatchNormCache<T>) {
    let eps = T::c(BN_EPS);
    let count = batch * spatial;
    let plane = |b: usize, c: usize| &x[(b * channels + c) * spatial..(b * channels + c + 1) * spatial];
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    if train {
        for c in 0..channels {
            let mut acc = T::zero();
            for b in 0..batch {
                for &v in plane(b, c) {
                    acc += v;
                }
            }
            mean[c] = acc / T::c(count as f64);
            let mut sq = T::zero();
            for b in 0..batch {
                for &v in plane(b, c) {
                    let d = v - mean[c];
                    sq += d * d;
                }
            }
            var[c] = sq / T::c(count as f64);
            let unbiased = if count > 1 { sq / T::c((count - 1) as f64) } else { var[c] };
            let m = T::c(BN_MOMENTUM);
            stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mean[c];
            stats.var[c] = (T::one() - m) * stats.var[c] + m * unbiased;
        }
    } else {
        mean.copy_from_slice(&stats.mean);
        var.copy_from_slice(&stats.var);
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = Vec::with_capacity(x.len());
    for b in 0..batch {
        for c in 0..channels {
            let (m, s, g, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
            y.extend(plane(b, c).iter().map(|&v| g * ((v - m) * s) + be));
        }
    }
    (y, BatchNormCache { mean, inv_std, train })
}

/// Returns `(dx, dγ, dβ)`. `x` is the forward input.
pub fn batch_norm_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    cache: &BatchNormCache<T>,
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let count = T::c((batch * spatial) as f64);
    let range = |b: usize, c: usize| (b * channels + c) * spatial..(b * channels + c + 1) * spatial;
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for b in 0..batch {
        for c in 0..channels {
            let (m, s) = (cache.mean[c], cache.inv_std[c]);
            let r = range(b, c);
            for (&g, &v) in dy[r.clone()].iter().zip(&x[r]) {
                dgamma[c] += g * ((v - m) * s);
                dbeta[c] += g;
            }
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for b in 0..batch {
        for c in 0..channels {
            let (m, s) = (cache.mean[c], cache.inv_std[c]);
            let scale = gamma[c] * s;
            let r = range(b, c);
            if cache.train {
                let (mb, mg) = (dbeta[c] / count, dgamma[c] / count);
                dx.extend(dy[r.clone()].iter().zip(&x[r]).map(|(&g, &v)| scale * (g - mb - ((v - m) * s) * mg)));
            } else {
                dx.extend(dy[r].iter().map(|&g| scale * g));
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Mean cross-entropy of softmax(logits) against class labels.
/// Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> Result<(T, Vec<T>)> {
    let batch = labels.len();
    if logits.len() != batch * classes {
        bail!(Dimension, "{} logits for {} labels x {} classes", logits.len(), batch, classes);
    }
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    for (i, (row, &label)) in logits.chunks_exact(classes).zip(labels).enumerate() {
        if label >= classes {
            bail!(Index, "label {} out of range for {} classes", label, classes);
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        for (p, &v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
            *p = (v - max).exp() / denom;
        }
        total += log_denom - (row[label] - max);
    }
    Ok((total / T::c(batch as f64), probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(g: &ConvGeometry, x: &[f64], k: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.filters * g.out_pixels()];
        for n in 0..g.batch {
            for f in 0..g.filters {
                for oi in 0..g.out_height {
                    for oj in 0..g.out_width {
                        let mut acc = b[f];
                        for c in 0..g.in_channels {
                            for ki in 0..g.kernel {
                                for kj in 0..g.kernel {
                                    let ii = (oi * g.stride + ki) as isize - g.padding as isize;
                                    let jj = (oj * g.stride + kj) as isize - g.padding as isize;
                                    if ii < 0 || jj < 0 || ii >= g.height as isize || jj >= g.width as isize {
                                        continue;
                                    }
                                    let xv =
                                        x[((n * g.in_channels + c) * g.height + ii as usize) * g.width + jj as usize];
                                    let kv = k[((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                                    acc += xv * kv;
                                }
                            }
                        }
                        y[((n * g.filters + f) * g.out_height + oi) * g.out_width + oj] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_agrees_with_direct_loops() {
        for &(stride, padding) in &[(1, 0), (1, 1), (2, 1), (2, 0), (1, 2), (3, 2)] {
            let g = ConvGeometry::new([11, 3, 7, 6], 4, 3, stride, padding).unwrap();
            let x: Vec<f64> = (0..11 * 3 * 7 * 6).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let k: Vec<f64> = (0..4 * 27).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
            let b = [0.1, -0.2, 0.3, 0.0];
            let expect = direct_conv(&g, &x, &k, &b);
            for keep in [false, true] {
                let (y, cols) = conv2d_forward(&g, &x, &k, &b, keep);
                assert_eq!(
                    cols.iter().map(Vec::len).sum::<usize>(),
                    if keep { 11 * g.patch_len() * g.out_pixels() } else { 0 }
                );
                for (a, e) in y.iter().zip(&expect) {
                    assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()), "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        assert!(ConvGeometry::new([1, 1, 2, 2], 1, 3, 1, 0).is_err());
        assert!(ConvGeometry::new([1, 1, 2, 2], 1, 3, 1, 1).is_ok());
    }

    #[test]
    fn relu_of_negative_zero_is_positive_zero() {
        assert_eq!(relu(-0.0f64).to_bits(), 0.0f64.to_bits());
        assert_eq!(relu(0.0f64).to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0f64, 0.0], &[2], 2).is_err());
    }

    #[test]
    fn max_pool_picks_first_max() {
        let x = [1.0f64, 3.0, 3.0, 0.0];
        let (y, arg) = max_pool_forward(&x, [1, 1, 2, 2], 2);
        assert_eq!(y, vec![3.0]);
        assert_eq!(arg, vec![1]);
    }
}
