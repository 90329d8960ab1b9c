use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{bail, Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

/// Read an IDX file of unsigned bytes, gunzipping it first if the name ends
/// in `.gz`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    let read = if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut raw)
    } else {
        let mut file = file;
        file.read_to_end(&mut raw)
    };
    read.map_err(|e| Error::io(path, e))?;
    parse_idx(&raw)
}

pub fn parse_idx(raw: &[u8]) -> Result<IdxArray> {
    if raw.len() < 4 {
        bail!(Format, "IDX header truncated ({} bytes)", raw.len());
    }
    let magic = u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
    let ndim = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        _ => bail!(Format, "unsupported IDX magic {:#010x}", magic),
    };
    let header = 4 + 4 * ndim;
    if raw.len() < header {
        bail!(Format, "IDX header truncated ({} bytes)", raw.len());
    }
    let shape: Vec<usize> =
        raw[4..header].chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let count: usize = shape.iter().product();
    let payload = &raw[header..];
    if payload.len() < count {
        bail!(Format, "IDX payload truncated: {} of {} bytes", payload.len(), count);
    }
    if payload.len() > count {
        bail!(Format, "IDX payload has {} trailing bytes", payload.len() - count);
    }
    Ok(IdxArray { shape, bytes: payload.to_vec() })
}

/// Write a 1-D (labels) or 3-D (images) unsigned-byte IDX file.
pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    let path = path.as_ref();
    let magic = match array.shape.len() {
        1 => IDX_LABELS_MAGIC,
        3 => IDX_IMAGES_MAGIC,
        n => bail!(Dimension, "IDX files hold 1-D or 3-D arrays, got {} dimensions", n),
    };
    if array.shape.iter().product::<usize>() != array.bytes.len() {
        bail!(Dimension, "shape {:?} does not match {} bytes", array.shape, array.bytes.len());
    }
    let mut out = Vec::with_capacity(4 + 4 * array.shape.len() + array.bytes.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.shape {
        let Ok(d) = u32::try_from(d) else {
            bail!(Dimension, "dimension {} does not fit the IDX header", d);
        };
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.bytes);
    File::create(path).and_then(|mut f| f.write_all(&out)).map_err(|e| Error::io(path, e))
}
