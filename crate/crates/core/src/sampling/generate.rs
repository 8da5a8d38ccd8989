use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cfg_mix;
use crate::error::{invalid, Result};
use crate::gpt::GptModel;
use crate::io::Config;
use crate::rvq::CodeMatrix;
use crate::tensor::{Real, Tensor};

/// Stream id of the sampling RNG, so generation never shares draws with
/// training streams built from the same seed.
pub const GENERATION_STREAM: u64 = 7;

/// How the length is read off the per-step stop probabilities `p_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StopPolicy {
    /// Argmax over `t` of `p_t · Π_{n_min ≤ s < t} (1 − p_s)`, the end
    /// distribution of the per-step stop events, with the mass left at
    /// `n_max` assigned to `n_max`. Steps after a confident stop never win.
    #[default]
    MostLikelyLength,
    /// Argmax over `t` of `p_t` itself.
    MaxProbability,
}

impl StopPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "most-likely-length" => Ok(StopPolicy::MostLikelyLength),
            "max-probability" => Ok(StopPolicy::MaxProbability),
            other => invalid(format!("unknown stop policy `{other}`")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StopPolicy::MostLikelyLength => "most-likely-length",
            StopPolicy::MaxProbability => "max-probability",
        }
    }

    /// Chosen length in `[n_min, stop_logits.len()]` from the guided stop
    /// logits of steps `1..=n_max`; ties go to the earliest step.
    pub fn select(self, stop_logits: &[f64], n_min: usize) -> usize {
        let n_max = stop_logits.len();
        let candidates = &stop_logits[n_min - 1..];
        let score: Vec<f64> = match self {
            StopPolicy::MaxProbability => candidates.to_vec(),
            StopPolicy::MostLikelyLength => {
                // log σ(z) = −softplus(−z), log(1 − σ(z)) = −softplus(z)
                let mut survived = 0.0;
                candidates
                    .iter()
                    .enumerate()
                    .map(|(i, &z)| {
                        let here = if n_min + i == n_max { survived } else { survived - softplus(-z) };
                        survived -= softplus(z);
                        here
                    })
                    .collect()
            }
        };
        let best = (0..score.len()).fold(0, |best, i| if score[i] > score[best] { i } else { best });
        n_min + best
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    /// Guidance scale `γ`; 1 is purely conditional.
    pub guidance: f64,
    pub temperature: f64,
    pub seed: u64,
    pub n_max: usize,
    /// Shortest length the stop argmax may pick.
    pub n_min: usize,
    /// Argmax instead of sampling.
    pub greedy: bool,
    pub stop_policy: StopPolicy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            guidance: 4.0,
            temperature: 1.0,
            seed: 0,
            n_max: 24,
            n_min: 1,
            greedy: false,
            stop_policy: StopPolicy::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self, model_n_max: usize) -> Result<()> {
        if !(self.guidance >= 0.0) || !(self.temperature > 0.0) {
            return invalid("guidance must be >= 0 and temperature > 0");
        }
        if self.n_min == 0 || self.n_min > self.n_max || self.n_max > model_n_max {
            return invalid(format!(
                "need 1 <= n_min ({}) <= n_max ({}) <= model n_max ({model_n_max})",
                self.n_min, self.n_max
            ));
        }
        Ok(())
    }

    /// Reads `gen.*` keys over the defaults, with `n_max` capped by default
    /// at `model_n_max`.
    pub fn from_config(c: &Config, seed: u64, model_n_max: usize) -> Result<Self> {
        let d = Self::default();
        Ok(GenerationConfig {
            guidance: c.get_or("gen.guidance", d.guidance)?,
            temperature: c.get_or("gen.temperature", d.temperature)?,
            seed,
            n_max: c.get_or("gen.n_max", model_n_max)?,
            n_min: c.get_or("gen.n_min", d.n_min)?,
            greedy: c.get_or("gen.greedy", d.greedy)?,
            stop_policy: c.get_str("gen.stop_policy").map_or(Ok(d.stop_policy), StopPolicy::parse)?,
        })
    }

    /// Default minimum latent length for a skeleton preset.
    pub fn n_min_for(skeleton: &str) -> usize {
        match skeleton {
            "humanml3d" => 5,
            "kit" => 3,
            "synthetic5" => 4,
            _ => 1,
        }
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Truncated to `stop_position` rows.
    pub codes: CodeMatrix,
    /// Chosen length in latent frames, in `[n_min, n_max]`.
    pub stop_position: usize,
    /// Guided stop probability at every step `1..=n_max`.
    pub stop_probs: Vec<f64>,
}

/// Samples a code matrix for condition `cond`. Every step runs the
/// conditional stream and, unless `γ = 1`, an unconditional stream on the
/// NULL condition with its own cache; code and stop logits are both mixed.
/// All `n_max` rows are decoded and the length is read off the guided stop
/// logits over `[n_min, n_max]` by `gen.stop_policy`.
pub fn generate<T: Real>(model: &GptModel<T>, cond: &Tensor<T>, gen: &GenerationConfig) -> Result<Generation> {
    gen.validate(model.config.n_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    rng.set_stream(GENERATION_STREAM);
    let depth = model.config.depth;
    let guided = gen.guidance != 1.0;
    let (mut cond_state, mut cond_ctx) = model.start(cond)?;
    let mut uncond = if guided { Some(model.start(&Tensor::zeros(cond.shape()))?) } else { None };

    let mut indices = Vec::with_capacity(gen.n_max * depth);
    let mut stop_logits = Vec::with_capacity(gen.n_max);
    for t in 1..=gen.n_max {
        let zc = model.stop_logit(&cond_ctx)?;
        let z = match &uncond {
            Some((_, uc)) => cfg_mix(&[zc], &[model.stop_logit(uc)?], gen.guidance)?[0],
            None => zc,
        };
        stop_logits.push(z);

        let mut row = Vec::with_capacity(depth);
        for _ in 0..depth {
            let lc = model.depth_logits_with(&cond_state, &cond_ctx, &row)?;
            let logits = match &uncond {
                Some((us, uc)) => cfg_mix(&lc, &model.depth_logits_with(us, uc, &row)?, gen.guidance)?,
                None => lc,
            };
            row.push(pick(&logits, gen, &mut rng));
        }
        if t < gen.n_max {
            cond_ctx = model.advance(&mut cond_state, &row)?;
            if let Some((us, uc)) = &mut uncond {
                *uc = model.advance(us, &row)?;
            }
        }
        indices.extend_from_slice(&row);
    }
    let stop_position = gen.stop_policy.select(&stop_logits, gen.n_min);
    indices.truncate(stop_position * depth);
    Ok(Generation {
        codes: CodeMatrix::new(stop_position, depth, indices)?,
        stop_position,
        stop_probs: stop_logits.iter().map(|&z| crate::gpt::sigmoid(z)).collect(),
    })
}

/// Argmax (lowest index on ties) or a multinomial draw from
/// `softmax(logits / temperature)`, evaluated in f64.
fn pick<T: Real, R: Rng + ?Sized>(logits: &[T], gen: &GenerationConfig, rng: &mut R) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|l| l.as_f64() / gen.temperature).collect();
    if gen.greedy {
        return (0..scaled.len()).fold(0, |best, i| if scaled[i] > scaled[best] { i } else { best });
    }
    let mx = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - mx).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding left `u` marginally above the last cumulative bound
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
