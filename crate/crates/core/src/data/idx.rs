//! MNIST IDX files: big-endian magic, big-endian `u32` dims, then `u8` payload.

use crate::error::{Error, Result};

/// Magic number of a one-dimensional label file.
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Magic number of a three-dimensional image file.
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

/// Raw contents of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Payload scaled to `[0, 1]`.
    pub fn to_unit_floats(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::parse(
                offset,
                format!("truncated header: missing {what} (file is {} bytes)", bytes.len()),
            )
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_be_u32(bytes, 0, "magic number")?;
    let ndim = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => {
            return Err(Error::parse(
                0,
                format!("bad magic 0x{other:08x}, expected 0x{LABELS_MAGIC:08x} or 0x{IMAGES_MAGIC:08x}"),
            ))
        }
    };
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = read_be_u32(bytes, 4 + 4 * i, &format!("dimension {i}"))? as usize;
        if d == 0 {
            return Err(Error::parse(4 + 4 * i, format!("dimension {i} is zero")));
        }
        dims.push(d);
    }
    let header = 4 + 4 * ndim;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(4, "dimensions overflow"))?;
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::parse(
            header + actual.min(expected),
            format!("expected {expected} payload bytes for dims {dims:?}, found {actual}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Serializes an array back to IDX bytes.
pub fn write_idx(array: &IdxArray) -> Result<Vec<u8>> {
    let magic = match array.dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        n => return Err(Error::dim(format!("IDX writer supports 1 or 3 dims, got {n}"))),
    };
    if array.dims.iter().product::<usize>() != array.data.len() {
        return Err(Error::dim("IDX dims do not match payload length"));
    }
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}
