use std::collections::HashSet;

use crate::error::{shape_err, Result};
use crate::rvq::{CodeMatrix, QuantizationResult};
use crate::tensor::{Real, Tensor};
use crate::vae::{Normalizer, SkeletonSpec};

fn aligned<'a, T: Real>(target: &'a Tensor<T>, recon: &'a Tensor<T>) -> Result<(&'a [T], &'a [T], usize)> {
    let (tt, dt) = target.dims2()?;
    let (tr, dr) = recon.dims2()?;
    if dt != dr || tr > tt {
        return shape_err("metrics", format!("target {tt}×{dt} vs reconstruction {tr}×{dr}"));
    }
    Ok((&target.data()[..tr * dt], recon.data(), dt))
}

/// Mean smooth-L1 (threshold 1) between the normalized target and
/// reconstruction, over the reconstruction's frames.
pub fn recon_smooth_l1<T: Real>(target: &Tensor<T>, recon: &Tensor<T>, norm: &Normalizer) -> Result<f64> {
    let (a, b) = (norm.apply(target)?, norm.apply(recon)?);
    let (a, b, _) = aligned(&a, &b)?;
    if b.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x.as_f64() - y.as_f64()).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    Ok(total / b.len() as f64)
}

/// Mean per-joint position error in raw units.
pub fn mpjpe<T: Real>(target: &Tensor<T>, recon: &Tensor<T>, skeleton: &SkeletonSpec) -> Result<f64> {
    let (a, b, d) = aligned(target, recon)?;
    let frames = b.len() / d.max(1);
    if frames == 0 || skeleton.position_slices.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for f in 0..frames {
        for s in &skeleton.position_slices {
            let sq: f64 = s
                .clone()
                .map(|i| (a[f * d + i].as_f64() - b[f * d + i].as_f64()).powi(2))
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(total / (frames * skeleton.position_slices.len()) as f64)
}

/// Mean residual norm after each depth, averaged over every latent frame.
pub fn residual_curve<T: Real>(results: &[QuantizationResult<T>]) -> Vec<f64> {
    let depth = results.first().map_or(0, |r| r.codes.depth());
    let mut sums = vec![0.0; depth];
    let mut frames = 0usize;
    for r in results {
        for t in 0..r.codes.rows() {
            for (w, s) in sums.iter_mut().enumerate() {
                *s += r.residual_norm(t, w);
            }
        }
        frames += r.codes.rows();
    }
    sums.iter().map(|s| s / frames.max(1) as f64).collect()
}

/// Fraction of the `k` codebook entries that appear anywhere in `codes`.
pub fn code_usage(codes: &[CodeMatrix], k: usize) -> f64 {
    let used: HashSet<usize> = codes.iter().flat_map(|c| c.indices().iter().copied()).collect();
    used.len() as f64 / k as f64
}

/// Fraction of pairs whose code matrices are identical, length included.
pub fn exact_match_fraction(a: &[CodeMatrix], b: &[CodeMatrix]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
