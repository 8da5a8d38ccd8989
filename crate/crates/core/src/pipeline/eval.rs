use std::fmt::Write as _;

use super::{code_usage, encode_dataset, exact_match_fraction, mpjpe, recon_smooth_l1, residual_curve};
use crate::data::Clip;
use crate::error::{invalid, Result};
use crate::gpt::GptModel;
use crate::rvq::CodeMatrix;
use crate::sampling::{generate, GenerationConfig};
use crate::vae::VaeModel;

/// Generation-side metrics, present when a GPT checkpoint is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationMetrics {
    /// Teacher-forced NLL of the encoded clips over the token count.
    pub per_token_nll: f64,
    /// Fraction of clips whose generated length equals the encoded length.
    pub stop_accuracy: f64,
    /// Fraction of clips whose generated code matrix equals the encoded one.
    pub exact_match: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clips: usize,
    pub recon_smooth_l1: f64,
    pub mpjpe: f64,
    /// Mean residual norm after depth `1..=R`.
    pub residual_curve: Vec<f64>,
    pub code_usage: f64,
    pub generation: Option<GenerationMetrics>,
}

impl EvalReport {
    /// `key=value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "clips={}", self.clips);
        let _ = writeln!(s, "recon_smooth_l1={:.8}", self.recon_smooth_l1);
        let _ = writeln!(s, "mpjpe={:.8}", self.mpjpe);
        let curve: Vec<String> = self.residual_curve.iter().map(|v| format!("{v:.8}")).collect();
        let _ = writeln!(s, "residual_curve={}", curve.join(","));
        let _ = writeln!(s, "code_usage={:.8}", self.code_usage);
        if let Some(g) = &self.generation {
            let _ = writeln!(s, "per_token_nll={:.8}", g.per_token_nll);
            let _ = writeln!(s, "stop_accuracy={:.8}", g.stop_accuracy);
            let _ = writeln!(s, "exact_match={:.8}", g.exact_match);
        }
        s
    }

    pub fn is_valid(&self) -> bool {
        let gen = self
            .generation
            .as_ref()
            .map_or(vec![], |g| vec![g.per_token_nll, g.stop_accuracy, g.exact_match]);
        [self.recon_smooth_l1, self.mpjpe, self.code_usage]
            .iter()
            .chain(&self.residual_curve)
            .chain(&gen)
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Tokenizes and reconstructs every clip; with a GPT, also scores the
/// encoded codes and generates from each clip's condition. Clip `i` is
/// generated with seed `gen.seed + i`.
pub fn eval_model(vae: &VaeModel<f32>, gpt: Option<&GptModel<f32>>, clips: &[Clip], gen: &GenerationConfig, workers: usize) -> Result<EvalReport> {
    if clips.is_empty() {
        return invalid("no clips to evaluate");
    }
    let motions: Vec<_> = clips.iter().map(|c| c.motion.clone()).collect();
    let results = encode_dataset(vae, &motions, workers)?;
    let (mut recon, mut joint) = (0.0, 0.0);
    for (clip, res) in clips.iter().zip(&results) {
        let re = vae.reconstruct(&res.codes)?;
        recon += recon_smooth_l1(&clip.motion, &re, &vae.normalizer)?;
        joint += mpjpe(&clip.motion, &re, &vae.skeleton)?;
    }
    let n = clips.len() as f64;
    let codes: Vec<CodeMatrix> = results.iter().map(|r| r.codes.clone()).collect();
    let generation = match gpt {
        None => None,
        Some(model) => {
            let (mut nll, mut tokens, mut stops) = (0.0, 0usize, 0usize);
            let mut generated = Vec::with_capacity(clips.len());
            for (i, (clip, c)) in clips.iter().zip(&codes).enumerate() {
                let rows = c.rows().min(model.config.n_max);
                let target = c.truncated(rows)?;
                nll += model.sequence_nll(&clip.embedding, &target)?;
                tokens += target.indices().len();
                let g = generate(
                    model,
                    &clip.embedding,
                    &GenerationConfig {
                        seed: gen.seed.wrapping_add(i as u64),
                        ..gen.clone()
                    },
                )?;
                stops += (g.stop_position == rows) as usize;
                generated.push(g.codes);
            }
            Some(GenerationMetrics {
                per_token_nll: nll / tokens as f64,
                stop_accuracy: stops as f64 / n,
                exact_match: exact_match_fraction(&generated, &codes),
            })
        }
    };
    Ok(EvalReport {
        clips: clips.len(),
        recon_smooth_l1: recon / n,
        mpjpe: joint / n,
        residual_curve: residual_curve(&results),
        code_usage: code_usage(&codes, vae.config.codebook_size),
        generation,
    })
}
