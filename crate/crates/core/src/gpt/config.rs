use crate::error::{invalid, Result};
use crate::io::Config;

/// Shape of the two-tier transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct GptConfig {
    pub layers_temporal: usize,
    pub layers_residual: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Vocabulary size `K` (the codebook size).
    pub codebook_size: usize,
    /// Residual depth `R`.
    pub depth: usize,
    /// Codebook entry width `d`; entries are projected to `d_model` when it differs.
    pub code_dim: usize,
    /// Width of the condition embedding.
    pub cond_dim: usize,
    /// Longest code matrix, in latent frames.
    pub n_max: usize,
    pub dropout: f64,
    pub beta_stop: f64,
}

impl Default for GptConfig {
    fn default() -> Self {
        GptConfig {
            layers_temporal: 9,
            layers_residual: 9,
            d_model: 512,
            heads: 16,
            codebook_size: 256,
            depth: 8,
            code_dim: 512,
            cond_dim: 512,
            n_max: 24,
            dropout: 0.1,
            beta_stop: 1.0,
        }
    }
}

impl GptConfig {
    /// Laptop-sized setting matched to [`crate::vae::VaeConfig::desk`].
    pub fn desk() -> Self {
        GptConfig {
            layers_temporal: 4,
            layers_residual: 4,
            d_model: 128,
            heads: 4,
            codebook_size: 64,
            code_dim: 64,
            n_max: 8,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers_temporal == 0 || self.layers_residual == 0 {
            return invalid("both tiers need at least one layer");
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return invalid(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.codebook_size < 2 || self.depth == 0 || self.code_dim == 0 || self.cond_dim == 0 || self.n_max == 0 {
            return invalid("codebook_size >= 2 and depth, code_dim, cond_dim, n_max >= 1 are required");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid("dropout must lie in [0, 1)");
        }
        if !(self.beta_stop >= 0.0) {
            return invalid("beta_stop must be >= 0");
        }
        Ok(())
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::desk();
        let cfg = GptConfig {
            layers_temporal: c.get_or("gpt.layers_temporal", d.layers_temporal)?,
            layers_residual: c.get_or("gpt.layers_residual", d.layers_residual)?,
            d_model: c.get_or("gpt.d_model", d.d_model)?,
            heads: c.get_or("gpt.heads", d.heads)?,
            codebook_size: c.get_or("gpt.codebook_size", d.codebook_size)?,
            depth: c.get_or("gpt.depth", d.depth)?,
            code_dim: c.get_or("gpt.code_dim", d.code_dim)?,
            cond_dim: c.get_or("gpt.cond_dim", d.cond_dim)?,
            n_max: c.get_or("gpt.n_max", d.n_max)?,
            dropout: c.get_or("gpt.dropout", d.dropout)?,
            beta_stop: c.get_or("gpt.beta_stop", d.beta_stop)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("gpt.layers_temporal", self.layers_temporal);
        c.set("gpt.layers_residual", self.layers_residual);
        c.set("gpt.d_model", self.d_model);
        c.set("gpt.heads", self.heads);
        c.set("gpt.codebook_size", self.codebook_size);
        c.set("gpt.depth", self.depth);
        c.set("gpt.code_dim", self.code_dim);
        c.set("gpt.cond_dim", self.cond_dim);
        c.set("gpt.n_max", self.n_max);
        c.set("gpt.dropout", self.dropout);
        c.set("gpt.beta_stop", self.beta_stop);
        c
    }
}
