//! `TNSR` binary tensor files: magic, `u8` rank, `rank` little-endian `u32`
//! dimensions, then the `f32` little-endian row-major payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";

pub fn write_tensor_to<W: Write>(mut w: W, tensor: &Tensor<f32>) -> std::io::Result<()> {
    let rank = u8::try_from(tensor.rank()).map_err(|_| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor rank exceeds 255")
    })?;
    let mut buf = Vec::with_capacity(5 + 4 * tensor.rank() + 4 * tensor.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(rank);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
        })?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Decodes a complete `TNSR` byte buffer. Trailing bytes are an error.
pub fn read_tensor_from(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |reason: &str| Error::format("TNSR tensor", reason);
    if bytes.len() < 5 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing TNSR magic"));
    }
    let rank = bytes[4] as usize;
    let dims_end = 5 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated dimension list"));
    }
    let shape: Vec<usize> = bytes[5..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("element count overflows"))?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * 4 {
        return Err(bad(&format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_tensor_to(&mut w, tensor)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_tensor_from(&bytes)
}
