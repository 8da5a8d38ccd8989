use crate::error::{shape_err, Result};
use crate::tensor::Real;

/// `uncond + γ·(cond − uncond)`. The mix is returned unmodified at `γ = 1`
/// (conditional) and `γ = 0` (unconditional): the general formula is not
/// bit-exact there in floating point.
pub fn cfg_mix<T: Real>(cond: &[T], uncond: &[T], gamma: f64) -> Result<Vec<T>> {
    if cond.len() != uncond.len() {
        return shape_err("cfg_mix", format!("{} conditional vs {} unconditional logits", cond.len(), uncond.len()));
    }
    if gamma == 1.0 {
        return Ok(cond.to_vec());
    }
    if gamma == 0.0 {
        return Ok(uncond.to_vec());
    }
    let g = T::from_f64(gamma);
    Ok(cond.iter().zip(uncond).map(|(&c, &u)| u + g * (c - u)).collect())
}
