use rand::Rng;

use super::{CodeMatrix, QuantizationResult};
use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// `K×d` dictionary shared by every residual depth, with the moving-average
/// statistics that train it.
///
/// Invariant: after [`Codebook::ema_update`], row `k` of `entries` equals
/// `ema_sum[k] / smoothed(ema_size)[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    entries: Tensor<T>,
    ema_size: Vec<f64>,
    ema_sum: Vec<f64>,
    usage: Vec<u64>,
    decay: f32,
    epsilon: f32,
}

impl<T: Real> Codebook<T> {
    pub const DEFAULT_DECAY: f32 = 0.99;
    pub const DEFAULT_EPSILON: f32 = 1e-5;

    /// Wraps `entries[K×d]`, seeding each cluster with size 1 and sum equal
    /// to its entry.
    pub fn from_entries(entries: Tensor<T>, decay: f32, epsilon: f32) -> Result<Self> {
        let (k, _) = entries.dims2()?;
        if k < 2 {
            return invalid("codebook needs K >= 2");
        }
        if !(0.0..1.0).contains(&decay) {
            return invalid(format!("EMA decay {decay} outside [0, 1)"));
        }
        if !(epsilon > 0.0) {
            return invalid("smoothing epsilon must be positive");
        }
        if !entries.all_finite() {
            return invalid("codebook entries must be finite");
        }
        Ok(Codebook {
            ema_size: vec![1.0; k],
            ema_sum: entries.to_f64_vec(),
            usage: vec![0; k],
            entries,
            decay,
            epsilon,
        })
    }

    /// Restores a codebook from stored statistics.
    pub fn from_parts(entries: Tensor<T>, ema_size: Vec<f64>, ema_sum: Vec<f64>, decay: f32, epsilon: f32) -> Result<Self> {
        let mut cb = Self::from_entries(entries, decay, epsilon)?;
        if ema_size.len() != cb.size() || ema_sum.len() != cb.size() * cb.dim() {
            return invalid("EMA statistics do not match the codebook shape");
        }
        cb.ema_size = ema_size;
        cb.ema_sum = ema_sum;
        Ok(cb)
    }

    /// Initial entries drawn from `latents[m×d]` rows (with replacement when
    /// `m < K`), plus Gaussian jitter of scale `jitter` so duplicates split.
    pub fn init_from_latents<R: Rng + ?Sized>(latents: &Tensor<T>, k: usize, jitter: f64, decay: f32, epsilon: f32, rng: &mut R) -> Result<Self> {
        let (m, d) = latents.dims2()?;
        let normal = rand_distr::Normal::new(0.0, jitter.max(0.0)).unwrap();
        let mut data = Vec::with_capacity(k * d);
        for _ in 0..k {
            let row = latents.row(rng.random_range(0..m));
            for &v in row {
                let noise: f64 = if jitter > 0.0 { rand_distr::Distribution::sample(&normal, rng) } else { 0.0 };
                data.push(T::from_f64(v.as_f64() + noise));
            }
        }
        Self::from_entries(Tensor::new(vec![k, d], data)?, decay, epsilon)
    }

    /// Number of entries `K`.
    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    /// Entry width `d`.
    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &[T] {
        self.entries.row(k)
    }

    pub fn ema_size(&self) -> &[f64] {
        &self.ema_size
    }

    pub fn ema_sum(&self) -> &[f64] {
        &self.ema_sum
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn decay(&self) -> f32 {
        self.decay
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    pub fn cast<U: Real>(&self) -> Codebook<U> {
        Codebook {
            entries: self.entries.cast(),
            ema_size: self.ema_size.clone(),
            ema_sum: self.ema_sum.clone(),
            usage: self.usage.clone(),
            decay: self.decay,
            epsilon: self.epsilon,
        }
    }

    /// Counts every pick in `codes` towards the usage counters.
    pub fn record_usage(&mut self, codes: &CodeMatrix) {
        for &i in codes.indices() {
            self.usage[i] += 1;
        }
    }

    /// One moving-average step from a quantization pass. Residuals from
    /// every depth pool into the shared statistics:
    ///
    /// `size ← decay·size + (1−decay)·count`,
    /// `sum ← decay·sum + (1−decay)·Σ assigned residuals`,
    /// `entry ← sum / ((size + ε)/(N + K·ε)·N)` with `N = Σ size`.
    pub fn ema_update(&mut self, results: &[&QuantizationResult<T>]) -> Result<()> {
        let (k, d) = (self.size(), self.dim());
        let mut counts = vec![0.0f64; k];
        let mut sums = vec![0.0f64; k * d];
        for res in results {
            if res.residuals.shape()[2] != d {
                return invalid("quantization result width does not match codebook");
            }
            let data = res.residuals.data();
            for (slot, &code) in res.codes.indices().iter().enumerate() {
                counts[code] += 1.0;
                let r = &data[slot * d..(slot + 1) * d];
                for (s, &v) in sums[code * d..(code + 1) * d].iter_mut().zip(r) {
                    *s += v.as_f64();
                }
            }
        }
        let decay = self.decay as f64;
        for (s, c) in self.ema_size.iter_mut().zip(&counts) {
            *s = decay * *s + (1.0 - decay) * c;
        }
        for (s, v) in self.ema_sum.iter_mut().zip(&sums) {
            *s = decay * *s + (1.0 - decay) * v;
        }
        self.refresh_entries();
        Ok(())
    }

    fn refresh_entries(&mut self) {
        let (k, d) = (self.size(), self.dim());
        let eps = self.epsilon as f64;
        let total: f64 = self.ema_size.iter().sum();
        let entries = self.entries.data_mut();
        for c in 0..k {
            let smoothed = (self.ema_size[c] + eps) / (total + k as f64 * eps) * total;
            for j in 0..d {
                entries[c * d + j] = T::from_f64(self.ema_sum[c * d + j] / smoothed);
            }
        }
    }

    /// Re-seeds every entry used fewer than `min_usage` times since the last
    /// sweep with a uniformly drawn row of `latents[m×d]`, then clears all
    /// usage counters. Returns the reset indices in increasing order.
    pub fn code_reset<R: Rng + ?Sized>(&mut self, latents: &Tensor<T>, min_usage: u64, rng: &mut R) -> Result<Vec<usize>> {
        let (m, d) = latents.dims2()?;
        if d != self.dim() {
            return invalid(format!("latent width {d} vs codebook width {}", self.dim()));
        }
        let dead: Vec<usize> = (0..self.size()).filter(|&k| self.usage[k] < min_usage).collect();
        for &k in &dead {
            let src = latents.row(rng.random_range(0..m)).to_vec();
            self.entries.data_mut()[k * d..(k + 1) * d].copy_from_slice(&src);
            self.ema_size[k] = 1.0;
            for (s, v) in self.ema_sum[k * d..(k + 1) * d].iter_mut().zip(&src) {
                *s = v.as_f64();
            }
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        Ok(dead)
    }
}
