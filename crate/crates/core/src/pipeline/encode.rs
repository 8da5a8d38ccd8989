use std::path::Path;
use std::thread;

use crate::error::{Error, Result};
use crate::io::Container;
use crate::rvq::{decode_codes, encode_codes, CodeMatrix, QuantizationResult};
use crate::tensor::Tensor;
use crate::vae::VaeModel;

/// Tokenizes every motion. Work is split into contiguous chunks, one per
/// worker, and results are reassembled in input order, so the output does
/// not depend on `workers`.
pub fn encode_dataset(model: &VaeModel<f32>, motions: &[Tensor<f32>], workers: usize) -> Result<Vec<QuantizationResult<f32>>> {
    let workers = workers.clamp(1, motions.len().max(1));
    if workers == 1 {
        return motions.iter().map(|m| model.tokenize(m)).collect();
    }
    let chunk = motions.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = motions
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|m| model.tokenize(m)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(motions.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::InvalidArgument("encoder worker panicked".into()))??);
        }
        Ok(out)
    })
}

fn section(i: usize) -> String {
    format!("codes.{i:06}")
}

/// Stores one RVQS code matrix per clip, in order, in a checkpoint container.
pub fn write_code_archive(path: impl AsRef<Path>, codes: &[CodeMatrix]) -> Result<()> {
    let mut c = Container::new();
    for (i, m) in codes.iter().enumerate() {
        c.add(section(i), encode_codes(m)?)?;
    }
    c.write(path)
}

pub fn read_code_archive(path: impl AsRef<Path>) -> Result<Vec<CodeMatrix>> {
    let c = Container::read(path)?;
    let count = c.names().count();
    (0..count).map(|i| decode_codes(c.require(&section(i))?)).collect()
}
