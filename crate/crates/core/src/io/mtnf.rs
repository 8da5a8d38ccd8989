use std::fs;
use std::path::Path;

use super::Reader;
use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

const MAGIC: &[u8; 4] = b"MTNF";
const VERSION: u32 = 1;

/// Serializes `t` as an MTNF blob: magic, `u32` version, `u8` dtype, `u8`
/// rank, zero padding to 8 bytes, `u32` extents, row-major payload.
pub fn encode_tensor<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    out.resize(16, 0);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Parses an MTNF blob. A payload stored at the other precision is
/// converted; a payload at `T`'s own precision round-trips bit-exactly.
pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader::new(bytes, "MTNF");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("MTNF: unsupported version {version}")));
    }
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("MTNF: unknown dtype tag {tag}")))?;
    let rank = r.u8()? as usize;
    r.take(6)?;
    let shape = (0..rank)
        .map(|_| r.u32().map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let payload = r.take(n * dtype.size())?;
    r.finish()?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    Tensor::new(shape, data).map_err(|e| Error::Format(format!("MTNF: {e}")))
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode_tensor(&bytes)
}
