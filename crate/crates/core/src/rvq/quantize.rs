use super::{CodeMatrix, Codebook};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Output of [`quantize_residual`] for `n` latents at depth `R`.
#[derive(Clone, Debug)]
pub struct QuantizationResult<T> {
    pub codes: CodeMatrix,
    /// `n×d`; equal to the depth-`R` slice of `partial_sums`.
    pub quantized: Tensor<T>,
    /// `n×R×d` running code sums `c_{S_t1} + … + c_{S_tw}`.
    pub partial_sums: Tensor<T>,
    /// `n×R×d` residual each depth quantized, `z − partial_sums[w−1]`.
    pub residuals: Tensor<T>,
    /// `n×R` values of `‖z − partial_sums[w]‖₂`.
    pub residual_norms: Vec<f64>,
}

impl<T: Real> QuantizationResult<T> {
    /// `partial_sums[·][w]` as an `n×d` tensor.
    pub fn partial_sum_at(&self, w: usize) -> Tensor<T> {
        depth_slice(&self.partial_sums, w)
    }

    pub fn residual_norm(&self, t: usize, w: usize) -> f64 {
        self.residual_norms[t * self.codes.depth() + w]
    }

    pub fn cast<U: Real>(&self) -> QuantizationResult<U> {
        QuantizationResult {
            codes: self.codes.clone(),
            quantized: self.quantized.cast(),
            partial_sums: self.partial_sums.cast(),
            residuals: self.residuals.cast(),
            residual_norms: self.residual_norms.clone(),
        }
    }
}

fn depth_slice<T: Real>(x: &Tensor<T>, w: usize) -> Tensor<T> {
    let (n, r, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x.data();
    let mut out = Vec::with_capacity(n * d);
    for t in 0..n {
        out.extend_from_slice(&data[(t * r + w) * d..(t * r + w + 1) * d]);
    }
    Tensor::new(vec![n, d], out).expect("slice of a valid tensor")
}

/// Index of the entry nearest to `v` in squared Euclidean distance; ties
/// go to the lowest index.
fn nearest<T: Real>(v: &[T], cb: &Codebook<T>) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for k in 0..cb.size() {
        let dist: f64 = v
            .iter()
            .zip(cb.entry(k))
            .map(|(&a, &c)| {
                let diff = a.as_f64() - c.as_f64();
                diff * diff
            })
            .sum();
        if dist < best_dist {
            best = k;
            best_dist = dist;
        }
    }
    best
}

/// Greedy residual quantization of `z[n×d]`: at each of `depth` steps pick
/// the entry nearest to the remaining residual and subtract it.
pub fn quantize_residual<T: Real>(z: &Tensor<T>, cb: &Codebook<T>, depth: usize) -> Result<QuantizationResult<T>> {
    let (n, d) = z.dims2()?;
    if depth == 0 {
        return invalid("residual depth must be >= 1");
    }
    if d != cb.dim() {
        return shape_err("quantize_residual", format!("latent width {d} vs codebook width {}", cb.dim()));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite { op: "quantize_residual" });
    }
    let mut codes = Vec::with_capacity(n * depth);
    let mut partial = Vec::with_capacity(n * depth * d);
    let mut residuals = Vec::with_capacity(n * depth * d);
    let mut norms = Vec::with_capacity(n * depth);
    let mut quantized = Vec::with_capacity(n * d);
    for t in 0..n {
        let zt = z.row(t);
        let mut sum = vec![T::zero(); d];
        for _ in 0..depth {
            let resid: Vec<T> = zt.iter().zip(&sum).map(|(&a, &s)| a - s).collect();
            let k = nearest(&resid, cb);
            for (s, &c) in sum.iter_mut().zip(cb.entry(k)) {
                *s += c;
            }
            let norm = zt
                .iter()
                .zip(&sum)
                .map(|(&a, &s)| (a.as_f64() - s.as_f64()).powi(2))
                .sum::<f64>()
                .sqrt();
            codes.push(k);
            residuals.extend_from_slice(&resid);
            partial.extend_from_slice(&sum);
            norms.push(norm);
        }
        quantized.extend_from_slice(&sum);
    }
    Ok(QuantizationResult {
        codes: CodeMatrix::new(n, depth, codes)?,
        quantized: Tensor::new(vec![n, d], quantized)?,
        partial_sums: Tensor::new(vec![n, depth, d], partial)?,
        residuals: Tensor::new(vec![n, depth, d], residuals)?,
        residual_norms: norms,
    })
}

/// Row-wise sum of the looked-up entries along the depth axis, accumulated
/// in the same order as [`quantize_residual`] so the two agree bit-exactly.
pub fn dequantize<T: Real>(codes: &CodeMatrix, cb: &Codebook<T>) -> Result<Tensor<T>> {
    codes.validate(cb.size())?;
    let d = cb.dim();
    let mut out = Vec::with_capacity(codes.rows() * d);
    for t in 0..codes.rows() {
        let mut sum = vec![T::zero(); d];
        for &k in codes.row(t) {
            for (s, &c) in sum.iter_mut().zip(cb.entry(k)) {
                *s += c;
            }
        }
        out.extend_from_slice(&sum);
    }
    Tensor::new(vec![codes.rows(), d], out)
}

/// What each depth's term pulls the latent towards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CommitmentMode {
    /// `Σ_w mse(z, sg[c_1 + … + c_w])`.
    #[default]
    Cumulative,
    /// `Σ_w mse(z, sg[c_w])`, the per-code term, for ablation.
    PerCode,
}

/// Commitment penalty for latents `z[n×d]`. Targets enter the tape as
/// constants, so the gradient reaches `z` only.
pub fn commitment_loss<T: Real>(tape: &mut Tape<T>, z: Var, result: &QuantizationResult<T>, cb: &Codebook<T>, mode: CommitmentMode) -> Result<Var> {
    let depth = result.codes.depth();
    if tape.shape(z) != result.quantized.shape() {
        return shape_err("commitment_loss", format!("{:?} vs {:?}", tape.shape(z), result.quantized.shape()));
    }
    let mut total: Option<Var> = None;
    for w in 0..depth {
        let target = match mode {
            CommitmentMode::Cumulative => result.partial_sum_at(w),
            CommitmentMode::PerCode => {
                let rows: Vec<T> = (0..result.codes.rows())
                    .flat_map(|t| cb.entry(result.codes.get(t, w)).to_vec())
                    .collect();
                Tensor::new(result.quantized.shape().to_vec(), rows)?
            }
        };
        let target = tape.constant(target);
        let term = tape.mse(z, target)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("depth >= 1"))
}

/// Forward value `quantized`, identity gradient to `z`.
pub fn straight_through<T: Real>(tape: &mut Tape<T>, z: Var, quantized: &Tensor<T>) -> Result<Var> {
    tape.straight_through(z, quantized)
}
