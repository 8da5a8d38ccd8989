use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode_dataset;
use crate::data::Clip;
use crate::error::{invalid, Result};
use crate::gpt::{GptConfig, GptModel};
use crate::sampling::{GptExample, GptStepReport, GptTrainConfig, GptTrainer};
use crate::tensor::Tensor;
use crate::vae::{Normalizer, VaeConfig, VaeModel, VaeStepReport, VaeTrainConfig, VaeTrainer};

/// Trains an autoencoder from scratch: weights drawn from `train.seed`,
/// normalization fitted on `motions`, then `train.steps` steps.
pub fn fit_vae(
    motions: &[Tensor<f32>],
    config: VaeConfig,
    train: VaeTrainConfig,
    on_step: impl FnMut(&VaeStepReport),
) -> Result<VaeModel<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut model = VaeModel::new(config, &mut rng)?;
    model.normalizer = Normalizer::fit(motions)?;
    let mut trainer = VaeTrainer::new(model, train)?;
    trainer.fit(motions, on_step)?;
    Ok(trainer.model)
}

/// The GPT settings that must agree with the tokenizer, taken from it.
pub fn gpt_config_for(vae: &VaeModel<f32>, base: GptConfig, cond_dim: usize) -> GptConfig {
    GptConfig {
        codebook_size: vae.config.codebook_size,
        depth: vae.config.depth,
        code_dim: vae.config.code_dim,
        cond_dim,
        ..base
    }
}

/// Encodes every clip and pairs it with its condition; code matrices
/// longer than `n_max` rows are cut to their first `n_max` rows.
pub fn gpt_examples(vae: &VaeModel<f32>, clips: &[Clip], n_max: usize, workers: usize) -> Result<Vec<GptExample<f32>>> {
    let motions: Vec<_> = clips.iter().map(|c| c.motion.clone()).collect();
    encode_dataset(vae, &motions, workers)?
        .into_iter()
        .zip(clips)
        .map(|(res, clip)| {
            let rows = res.codes.rows().min(n_max);
            Ok(GptExample {
                cond: clip.embedding.clone(),
                codes: res.codes.truncated(rows)?,
            })
        })
        .collect()
}

/// Trains a GPT from scratch over `vae`'s codebook. Weights are drawn from
/// `train.seed`; the trainer's own streams handle batching and augmentation.
pub fn fit_gpt(
    vae: &VaeModel<f32>,
    examples: &[GptExample<f32>],
    config: GptConfig,
    train: GptTrainConfig,
    on_step: impl FnMut(&GptStepReport),
) -> Result<GptModel<f32>> {
    if examples.is_empty() {
        return invalid("no training examples");
    }
    let config = gpt_config_for(vae, config, examples[0].cond.len());
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let model = GptModel::new(config, vae.codebook.entries().clone(), &mut rng)?;
    let mut trainer = GptTrainer::new(model, train)?;
    trainer.fit(examples, on_step)?;
    Ok(trainer.model)
}
