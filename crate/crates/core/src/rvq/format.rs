use super::{CodeMatrix, Codebook};
use crate::error::{Error, Result};
use crate::io::{decode_tensor, encode_tensor, Reader};
use crate::tensor::{Real, Tensor};

const CODEBOOK_MAGIC: &[u8; 4] = b"RVQC";
const CODES_MAGIC: &[u8; 4] = b"RVQS";
const VERSION: u32 = 1;

fn push_blob(out: &mut Vec<u8>, blob: Vec<u8>) {
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
}

fn take_blob<'a>(r: &mut Reader<'a>) -> Result<&'a [u8]> {
    let len = r.u64()? as usize;
    r.take(len)
}

/// RVQC layout: magic, `u32` version, `u32` K, `u32` d, `f32` decay,
/// `f32` epsilon, then three length-prefixed MTNF blobs (entries, EMA
/// sizes, EMA sums).
pub fn encode_codebook<T: Real>(cb: &Codebook<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.size() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&cb.decay().to_le_bytes());
    out.extend_from_slice(&cb.epsilon().to_le_bytes());
    push_blob(&mut out, encode_tensor(cb.entries()));
    let size = Tensor::<f64>::new(vec![cb.size()], cb.ema_size().to_vec()).unwrap();
    push_blob(&mut out, encode_tensor(&size));
    let sum = Tensor::<f64>::new(vec![cb.size(), cb.dim()], cb.ema_sum().to_vec()).unwrap();
    push_blob(&mut out, encode_tensor(&sum));
    out
}

pub fn decode_codebook<T: Real>(bytes: &[u8]) -> Result<Codebook<T>> {
    let mut r = Reader::new(bytes, "RVQC");
    r.magic(CODEBOOK_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("RVQC: unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let decay = r.f32()?;
    let epsilon = r.f32()?;
    let entries: Tensor<T> = decode_tensor(take_blob(&mut r)?)?;
    let size: Tensor<f64> = decode_tensor(take_blob(&mut r)?)?;
    let sum: Tensor<f64> = decode_tensor(take_blob(&mut r)?)?;
    r.finish()?;
    if entries.shape() != [k, d] {
        return Err(Error::Format(format!("RVQC: header says {k}×{d}, entries are {:?}", entries.shape())));
    }
    Codebook::from_parts(entries, size.into_vec(), sum.into_vec(), decay, epsilon)
        .map_err(|e| Error::Format(format!("RVQC: {e}")))
}

/// RVQS layout: magic, `u32` n, `u32` R, then `n·R` `u16` indices row-major.
pub fn encode_codes(codes: &CodeMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 2 * codes.indices().len());
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&(codes.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(codes.depth() as u32).to_le_bytes());
    for &i in codes.indices() {
        let v = u16::try_from(i).map_err(|_| Error::Format(format!("RVQS: code {i} exceeds the 16-bit range")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_codes(bytes: &[u8]) -> Result<CodeMatrix> {
    let mut r = Reader::new(bytes, "RVQS");
    r.magic(CODES_MAGIC)?;
    let n = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let indices = (0..n * depth)
        .map(|_| r.u16().map(usize::from))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    CodeMatrix::new(n, depth, indices).map_err(|e| Error::Format(format!("RVQS: {e}")))
}
