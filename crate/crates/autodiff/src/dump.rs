//! Binary tensor records used for test fixtures and checkpoints.
//!
//! One record is, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "BNTR"
//! dtype   u8       0 = f32, 1 = f64
//! rank    u32
//! dims    rank × u64
//! values  prod(dims) × dtype, row-major, IEEE-754 little-endian
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BNTR";

pub fn encode<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.numel() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn write_tensor<T: Real>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads one record; the stored dtype must be `T`.
pub fn read_tensor<T: Real>(r: &mut impl Read) -> Result<Tensor<T>> {
    if &read_array::<4>(r)? != MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let [code] = read_array::<1>(r)?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "tensor stored as {}, requested {}",
            dtype.name(),
            T::DTYPE.name()
        )));
    }
    let rank = u32::from_le_bytes(read_array(r)?) as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(read_array(r)?) as usize);
    }
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let numel = numel.ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let size = dtype.size();
    let mut raw = vec![0u8; numel.checked_mul(size).ok_or_else(|| Error::Format("tensor too large".into()))?];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(&shape, data)
}
