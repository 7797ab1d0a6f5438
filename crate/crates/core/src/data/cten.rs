//! CTEN: a minimal little-endian tensor file.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "CTEN"
//! 4       1         version (1)
//! 5       1         dtype (1 = f32)
//! 6       2         rank (u16)
//! 8       8*rank    dims (u64 each)
//! ...     4*prod    payload, row-major f32
//! ```
//!
//! Every multi-byte field is little-endian. A rank-0 tensor is a single
//! scalar (12 bytes on disk).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"CTEN";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

fn format_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        format: "CTEN",
        field,
        detail: detail.into(),
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let magic = bytes.get(0..4).ok_or_else(|| format_err("magic", "file shorter than 4 bytes"))?;
    if magic != MAGIC {
        return Err(format_err("magic", format!("expected \"CTEN\", found {magic:?}")));
    }
    let version = *bytes.get(4).ok_or_else(|| format_err("version", "missing"))?;
    if version != VERSION {
        return Err(format_err("version", format!("unsupported version {version}")));
    }
    let dtype = *bytes.get(5).ok_or_else(|| format_err("dtype", "missing"))?;
    if dtype != DTYPE_F32 {
        return Err(format_err("dtype", format!("unsupported dtype {dtype}")));
    }
    let rank_bytes = bytes.get(6..8).ok_or_else(|| format_err("rank", "missing"))?;
    let rank = u16::from_le_bytes([rank_bytes[0], rank_bytes[1]]) as usize;
    if rank > MAX_RANK {
        return Err(format_err("rank", format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let dims_end = 8 + 8 * rank;
    let dim_bytes = bytes
        .get(8..dims_end)
        .ok_or_else(|| format_err("dims", format!("need {} bytes for {rank} dims", 8 * rank)))?;
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for chunk in dim_bytes.chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        let d = usize::try_from(d).map_err(|_| format_err("dims", format!("extent {d} too large")))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| format_err("dims", "element count overflows"))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    let expected = numel
        .checked_mul(4)
        .ok_or_else(|| format_err("dims", "payload size overflows"))?;
    if payload.len() != expected {
        return Err(format_err(
            "payload",
            format!("expected {expected} bytes for shape {shape:?}, found {}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_cten(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_cten(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
