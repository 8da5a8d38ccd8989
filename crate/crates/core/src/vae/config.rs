use crate::error::{invalid, Error, Result};
use crate::io::Config;
use crate::rvq::CommitmentMode;

/// Architecture, quantizer and loss settings of the motion autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub skeleton: String,
    /// Number of stride-2 stages `L`; the downsampling rate is `2^L`.
    pub levels: usize,
    pub channels: usize,
    pub dilation: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub depth: usize,
    pub alpha_vel: f64,
    pub alpha_acc: f64,
    pub alpha_bone: f64,
    pub beta_commit: f64,
    pub commitment: CommitmentMode,
    pub ema_decay: f32,
    pub ema_epsilon: f32,
    pub reset_min_usage: u64,
    pub reset_every: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            skeleton: "humanml3d".into(),
            levels: 3,
            channels: 512,
            dilation: 3,
            codebook_size: 256,
            code_dim: 512,
            depth: 8,
            alpha_vel: 0.5,
            alpha_acc: 0.5,
            alpha_bone: 1.0,
            beta_commit: 0.02,
            commitment: CommitmentMode::Cumulative,
            ema_decay: 0.99,
            ema_epsilon: 1e-5,
            reset_min_usage: 1,
            reset_every: 256,
        }
    }
}

impl VaeConfig {
    /// Laptop-sized setting used by the synthetic pipeline.
    pub fn desk() -> Self {
        VaeConfig {
            skeleton: "synthetic5".into(),
            channels: 64,
            codebook_size: 64,
            code_dim: 64,
            ..Self::default()
        }
    }

    /// Downsampling rate `l = 2^L`.
    pub fn downsample(&self) -> usize {
        1 << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.channels == 0 || self.dilation == 0 || self.code_dim == 0 || self.depth == 0 {
            return invalid("levels, channels, dilation, code_dim and depth must be >= 1");
        }
        if self.codebook_size < 2 {
            return invalid("codebook_size must be >= 2");
        }
        if [self.alpha_vel, self.alpha_acc, self.alpha_bone, self.beta_commit].iter().any(|&w| !(w >= 0.0)) {
            return invalid("loss weights must be >= 0");
        }
        Ok(())
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::desk();
        let commitment = match c.get_str("vae.commitment").unwrap_or("cumulative") {
            "cumulative" => CommitmentMode::Cumulative,
            "per-code" => CommitmentMode::PerCode,
            other => return Err(Error::Config(format!("vae.commitment: unknown mode `{other}`"))),
        };
        let cfg = VaeConfig {
            skeleton: c.get_str("vae.skeleton").unwrap_or(&d.skeleton).to_string(),
            levels: c.get_or("vae.levels", d.levels)?,
            channels: c.get_or("vae.channels", d.channels)?,
            dilation: c.get_or("vae.dilation", d.dilation)?,
            codebook_size: c.get_or("vae.codebook_size", d.codebook_size)?,
            code_dim: c.get_or("vae.code_dim", d.code_dim)?,
            depth: c.get_or("vae.depth", d.depth)?,
            alpha_vel: c.get_or("vae.alpha_vel", d.alpha_vel)?,
            alpha_acc: c.get_or("vae.alpha_acc", d.alpha_acc)?,
            alpha_bone: c.get_or("vae.alpha_bone", d.alpha_bone)?,
            beta_commit: c.get_or("vae.beta_commit", d.beta_commit)?,
            commitment,
            ema_decay: c.get_or("vae.ema_decay", d.ema_decay)?,
            ema_epsilon: c.get_or("vae.ema_epsilon", d.ema_epsilon)?,
            reset_min_usage: c.get_or("vae.reset_min_usage", d.reset_min_usage)?,
            reset_every: c.get_or("vae.reset_every", d.reset_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("vae.skeleton", &self.skeleton);
        c.set("vae.levels", self.levels);
        c.set("vae.channels", self.channels);
        c.set("vae.dilation", self.dilation);
        c.set("vae.codebook_size", self.codebook_size);
        c.set("vae.code_dim", self.code_dim);
        c.set("vae.depth", self.depth);
        c.set("vae.alpha_vel", self.alpha_vel);
        c.set("vae.alpha_acc", self.alpha_acc);
        c.set("vae.alpha_bone", self.alpha_bone);
        c.set("vae.beta_commit", self.beta_commit);
        c.set(
            "vae.commitment",
            match self.commitment {
                CommitmentMode::Cumulative => "cumulative",
                CommitmentMode::PerCode => "per-code",
            },
        );
        c.set("vae.ema_decay", self.ema_decay);
        c.set("vae.ema_epsilon", self.ema_epsilon);
        c.set("vae.reset_min_usage", self.reset_min_usage);
        c.set("vae.reset_every", self.reset_every);
        c
    }
}

/// Optimization settings for autoencoder training.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub crop_len: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Steps at full rate after warmup before cosine decay begins.
    pub hold_steps: usize,
    pub weight_decay: f64,
    pub codebook_jitter: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            steps: 200_000,
            batch_size: 256,
            crop_len: 32,
            lr: 2e-4,
            warmup_steps: 1000,
            hold_steps: 150_000,
            weight_decay: 0.0,
            codebook_jitter: 1e-3,
            seed: 0,
        }
    }
}

impl VaeTrainConfig {
    pub fn from_config(c: &Config, seed: u64) -> Result<Self> {
        let d = Self::default();
        Ok(VaeTrainConfig {
            steps: c.get_or("vae.steps", d.steps)?,
            batch_size: c.get_or("vae.batch_size", d.batch_size)?,
            crop_len: c.get_or("vae.crop_len", d.crop_len)?,
            lr: c.get_or("vae.lr", d.lr)?,
            warmup_steps: c.get_or("vae.warmup_steps", d.warmup_steps)?,
            hold_steps: c.get_or("vae.hold_steps", d.hold_steps)?,
            weight_decay: c.get_or("vae.weight_decay", d.weight_decay)?,
            codebook_jitter: c.get_or("vae.codebook_jitter", d.codebook_jitter)?,
            seed,
        })
    }
}
