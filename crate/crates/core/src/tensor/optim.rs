use std::f64::consts::PI;

use super::{ParamStore, Real, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay. Moment estimates are kept in `f64`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Real>(config: AdamWConfig, params: &ParamStore<T>) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return invalid("AdamW betas must lie in [0, 1)");
        }
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every gradient is checked for finiteness before
    /// any parameter is touched, so a bad step leaves the model unchanged.
    pub fn step<T: Real>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return invalid(format!("{} gradients for {} parameters", grads.len(), params.len()));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient {
                        param: params.name(id).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_ref();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j].as_f64());
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let mut x = p[j].as_f64();
                x -= lr * weight_decay * x;
                x -= lr * mhat / (vhat.sqrt() + eps);
                p[j] = T::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over `warm_steps`, then cosine decay toward 0
/// at `total_steps`.
pub fn cosine_lr(step: usize, warm_steps: usize, total_steps: usize, base_lr: f64) -> f64 {
    LrSchedule {
        base_lr,
        warmup_steps: warm_steps,
        hold_steps: 0,
        total_steps,
    }
    .lr(step)
}

/// Warmup, optional constant hold, then cosine decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub hold_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_steps: 0,
            hold_steps: usize::MAX / 2,
            total_steps: usize::MAX,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let decay_start = self.warmup_steps.saturating_add(self.hold_steps);
        if step <= decay_start {
            return self.base_lr;
        }
        if step >= self.total_steps || self.total_steps <= decay_start {
            return 0.0;
        }
        let progress = (step - decay_start) as f64 / (self.total_steps - decay_start) as f64;
        0.5 * self.base_lr * (1.0 + (PI * progress).cos())
    }
}
