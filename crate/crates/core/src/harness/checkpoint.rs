//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPDA1" | config hash [32] | epoch u64
//! | tensor count u64 | (len u64, len × f64)*        parameters, then batch-norm running stats
//! | kind u8 | alpha f64 | lambda f64 | rate u8 | eta f64 | t u64
//! | average count u64 | (len u64, len × f64)*      optimizer running averages
//! | mask flag u8 [| mask count u64 | (len u64, ⌈len/8⌉ bytes)*]
//! ```

use std::path::Path;

use crate::asr::FreezeMask;
use crate::error::{bail, Error, Result};
use crate::models::Model;
use crate::optim::{LearningRate, Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SPDA1";

const KINDS: [OptimizerKind; 5] = [
    OptimizerKind::Sgd,
    OptimizerKind::SdaAveraged,
    OptimizerKind::SdaPerturbed,
    OptimizerKind::ProxSgd,
    OptimizerKind::Rda,
];

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub config_hash: [u8; 32],
    /// Number of completed epochs.
    pub epoch: usize,
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    pub mask: Option<FreezeMask>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_block<T: Scalar>(out: &mut Vec<u8>, data: &[T]) {
    put_u64(out, data.len() as u64);
    for &v in data {
        put_f64(out, v.to_f64_lossless());
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.config_hash);
        put_u64(&mut out, self.epoch as u64);

        let params = self.model.params();
        let stats = self.model.norm_stats();
        put_u64(&mut out, (params.len() + 2 * stats.len()) as u64);
        for p in params {
            put_block(&mut out, p.value.data());
        }
        for s in stats {
            put_block(&mut out, &s.mean);
            put_block(&mut out, &s.var);
        }

        let opt = &self.optimizer;
        out.push(KINDS.iter().position(|k| *k == opt.kind()).expect("listed kind") as u8);
        put_f64(&mut out, opt.alpha());
        put_f64(&mut out, opt.lambda());
        match opt.rate() {
            LearningRate::Decaying => {
                out.push(0);
                put_f64(&mut out, 0.0);
            }
            LearningRate::Constant(eta) => {
                out.push(1);
                put_f64(&mut out, eta);
            }
        }
        put_u64(&mut out, opt.t());
        put_u64(&mut out, opt.dual_averages().len() as u64);
        for g in opt.dual_averages() {
            put_block(&mut out, g.data());
        }

        match &self.mask {
            None => out.push(0),
            Some(mask) => {
                out.push(1);
                put_u64(&mut out, mask.bits().len() as u64);
                for bits in mask.bits() {
                    put_u64(&mut out, bits.len() as u64);
                    let mut packed = vec![0u8; bits.len().div_ceil(8)];
                    for (i, &b) in bits.iter().enumerate() {
                        if b {
                            packed[i / 8] |= 1 << (i % 8);
                        }
                    }
                    out.extend_from_slice(&packed);
                }
            }
        }
        out
    }

    /// Decode a checkpoint into a copy of `template`, which fixes the
    /// architecture the tensors must fit.
    pub fn from_bytes(bytes: &[u8], template: &Model<T>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            bail!(Format, "not a checkpoint (bad magic)");
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let epoch = r.u64()? as usize;

        let mut model = template.clone();
        let n_stats = model.norm_stats().len();
        let count = r.u64()? as usize;
        if count != model.params().len() + 2 * n_stats {
            bail!(Format, "checkpoint holds {} tensors, model needs {}", count, model.params().len() + 2 * n_stats);
        }
        for p in model.params_mut() {
            let v = r.block::<T>()?;
            if v.len() != p.numel() {
                bail!(Format, "tensor {} has {} values, expected {}", p.name, v.len(), p.numel());
            }
            p.value.data_mut().copy_from_slice(&v);
            p.grad.fill(T::zero());
        }
        for s in model.norm_stats_mut() {
            for dst in [&mut s.mean, &mut s.var] {
                let v = r.block::<T>()?;
                if v.len() != dst.len() {
                    bail!(Format, "running statistics have {} values, expected {}", v.len(), dst.len());
                }
                *dst = v;
            }
        }

        let kind = *KINDS.get(r.u8()? as usize).ok_or_else(|| Error::Format("unknown optimizer kind".into()))?;
        let alpha = r.f64()?;
        let lambda = r.f64()?;
        let rate_tag = r.u8()?;
        let eta = r.f64()?;
        let rate = match rate_tag {
            0 => LearningRate::Decaying,
            1 => LearningRate::Constant(eta),
            _ => bail!(Format, "unknown learning-rate tag {}", rate_tag),
        };
        let t = r.u64()?;
        let n_avg = r.u64()? as usize;
        if n_avg != 0 && n_avg != model.params().len() {
            bail!(Format, "{} running averages for {} parameters", n_avg, model.params().len());
        }
        let mut gbar = Vec::with_capacity(n_avg);
        for p in model.params().iter().take(n_avg) {
            let v = r.block::<T>()?;
            gbar.push(Tensor::from_vec(p.value.shape(), v).map_err(|_| Error::Format("running average shape".into()))?);
        }
        let corrupt = |e: Error| Error::Format(format!("optimizer state: {e}"));
        let mut optimizer = Optimizer::new(kind, alpha, lambda).and_then(|o| o.with_rate(rate)).map_err(corrupt)?;
        optimizer.restore(t, gbar).map_err(corrupt)?;

        let mask = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u64()? as usize;
                if n != model.params().len() {
                    bail!(Format, "{} mask tensors for {} parameters", n, model.params().len());
                }
                let mut bits = Vec::with_capacity(n);
                for p in model.params() {
                    let len = r.u64()? as usize;
                    if len != p.numel() {
                        bail!(Format, "mask of {} has {} bits, expected {}", p.name, len, p.numel());
                    }
                    let packed = r.take(len.div_ceil(8))?;
                    bits.push((0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect());
                }
                Some(FreezeMask::from_bits(bits))
            }
            f => bail!(Format, "unknown mask flag {}", f),
        };
        if r.pos != bytes.len() {
            bail!(Format, "{} trailing bytes", bytes.len() - r.pos);
        }
        Ok(Checkpoint { config_hash, epoch, model, optimizer, mask })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!(Format, "checkpoint truncated at byte {}", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let len = self.u64()? as usize;
        if len > (self.bytes.len() - self.pos) / 8 {
            bail!(Format, "block of {} values overruns the file", len);
        }
        (0..len).map(|_| self.f64().map(T::c)).collect()
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint for a model shaped like `template`.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, template: &Model<T>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, template)
}

/// Config hash stored in a checkpoint file, read without decoding the rest.
pub fn peek_config_hash(path: impl AsRef<Path>) -> Result<[u8; 32]> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 37 || &bytes[..5] != MAGIC {
        bail!(Format, "{} is not a checkpoint", path.display());
    }
    Ok(bytes[5..37].try_into().expect("32 bytes"))
}
