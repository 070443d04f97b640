use std::path::Path;

use crate::data::bytes::{check_magic, push_f32s, push_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TNSR";

/// `TNSR`, u32 rank, u32 dims, f32 payload; all little-endian.
pub fn encode_tnsr(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, t.rank()).unwrap();
    for &d in t.shape() {
        push_u32(&mut out, d).expect("tensor dims fit in u32");
    }
    push_f32s(&mut out, t.data());
    out
}

pub fn decode_tnsr(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes, "TNSR");
    check_magic(r.take(4)?, MAGIC, "TNSR")?;
    let rank = r.u32_le()? as usize;
    if !(1..=4).contains(&rank) {
        return Err(Error::format("TNSR", format!("rank {rank} outside 1..=4")));
    }
    let shape = (0..rank).map(|_| Ok(r.u32_le()? as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format("TNSR", "dims overflow"))?;
    let data = r.f32_le_vec(n)?;
    if !r.is_done() {
        return Err(Error::format("TNSR", "trailing bytes after payload"));
    }
    Tensor::new(shape, data)
}

pub fn write_tnsr(path: &Path, t: &Tensor<f32>) -> Result<()> {
    Ok(std::fs::write(path, encode_tnsr(t))?)
}

pub fn read_tnsr(path: &Path) -> Result<Tensor<f32>> {
    decode_tnsr(&std::fs::read(path)?)
}
