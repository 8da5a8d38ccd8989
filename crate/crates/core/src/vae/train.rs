use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReconTerms, VaeModel, VaeTrainConfig};
use crate::error::{invalid, Error, Result};
use crate::rvq::{Codebook, QuantizationResult};
use crate::tensor::{AdamW, AdamWConfig, LrSchedule, Real, Tape, Tensor};

/// Summary of one optimization step, averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeStepReport {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub recon_loss: f64,
    pub commit_loss: f64,
    pub terms: ReconTerms,
    pub reset_codes: Vec<usize>,
}

/// Owns the model, optimizer state and data order of an autoencoder run.
pub struct VaeTrainer<T> {
    pub model: VaeModel<T>,
    pub config: VaeTrainConfig,
    opt: AdamW,
    schedule: LrSchedule,
    step: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    codebook_seeded: bool,
}

impl<T: Real> VaeTrainer<T> {
    pub fn new(model: VaeModel<T>, config: VaeTrainConfig) -> Result<Self> {
        if config.batch_size == 0 || config.crop_len < model.downsample() {
            return invalid("batch_size must be >= 1 and crop_len >= the downsampling rate");
        }
        let opt = AdamW::new(
            AdamWConfig {
                weight_decay: config.weight_decay,
                ..Default::default()
            },
            &model.params,
        )?;
        let schedule = LrSchedule {
            base_lr: config.lr,
            warmup_steps: config.warmup_steps,
            hold_steps: config.hold_steps,
            total_steps: config.steps,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(VaeTrainer {
            model,
            config,
            opt,
            schedule,
            step: 0,
            rng,
            order: Vec::new(),
            cursor: 0,
            codebook_seeded: false,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Next batch of normalized crops. Clips are visited in reshuffled
    /// epochs; each contributes one random window of `crop_len` frames
    /// (rounded down to a multiple of the downsampling rate when shorter).
    pub fn next_batch(&mut self, clips: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if clips.is_empty() {
            return invalid("no training clips");
        }
        let l = self.model.downsample();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..clips.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let clip = &clips[self.order[self.cursor]];
            self.cursor += 1;
            let (t, d) = clip.dims2()?;
            let len = self.config.crop_len.min(t / l * l);
            if len == 0 {
                return invalid(format!("clip of {t} frames is shorter than the downsampling rate {l}"));
            }
            let start = self.rng.random_range(0..=t - len);
            let window = clip.data()[start * d..(start + len) * d].to_vec();
            batch.push(self.model.normalizer.apply(&Tensor::new(vec![len, d], window)?)?);
        }
        Ok(batch)
    }

    /// One step on normalized clips: autoencode, backpropagate the
    /// reconstruction plus weighted commitment loss, update the weights,
    /// then the codebook statistics, and every `reset_every` steps re-seed
    /// idle codes.
    pub fn step(&mut self, batch: &[Tensor<T>]) -> Result<VaeStepReport> {
        if batch.is_empty() {
            return invalid("empty batch");
        }
        if !self.codebook_seeded {
            self.seed_codebook(batch)?;
        }
        let step = self.step;
        let diverged = |e: Error, detail: &str| match e {
            Error::NonFinite { op } => Error::Diverged {
                step,
                detail: format!("{detail}: non-finite value in {op}"),
            },
            other => other,
        };
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape, true);
        let mut total = None;
        let mut results: Vec<QuantizationResult<T>> = Vec::with_capacity(batch.len());
        let mut latents = Vec::new();
        let (mut recon, mut commit) = (0.0, 0.0);
        let mut terms = ReconTerms::default();
        let model = &self.model;
        for (i, clip) in batch.iter().enumerate() {
            let mut quantize = model.live_quantizer();
            let out = model
                .forward_with(&mut tape, &bound, clip, &mut quantize)
                .map_err(|e| diverged(e, &format!("batch item {i}")))?;
            recon += out.recon_loss;
            commit += out.commit_loss;
            terms.frames += out.recon.frames;
            terms.vel += out.recon.vel;
            terms.acc += out.recon.acc;
            terms.bone += out.recon.bone;
            latents.extend_from_slice(tape.value(out.latents).data());
            results.push(out.quantization);
            total = Some(match total {
                None => out.loss,
                Some(acc) => tape.add(acc, out.loss)?,
            });
        }
        let n = batch.len() as f64;
        let loss = tape.scale(total.expect("non-empty batch"), 1.0 / n)?;
        let loss_value = tape.value(loss).item().as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss_value} (recon {recon}, commit {commit})"),
            });
        }
        let mut grads = tape.backward(loss)?;
        let grads = bound.collect(&mut grads);
        let lr = self.schedule.lr(step);
        self.opt.step(&mut self.model.params, &grads, lr).map_err(|e| match e {
            Error::NonFiniteGradient { param } => Error::Diverged {
                step,
                detail: format!("non-finite gradient for `{param}` (recon {recon}, commit {commit})"),
            },
            other => other,
        })?;

        let refs: Vec<&QuantizationResult<T>> = results.iter().collect();
        self.model.codebook.ema_update(&refs)?;
        for r in &results {
            self.model.codebook.record_usage(&r.codes);
        }
        self.step += 1;
        let mut reset_codes = Vec::new();
        let every = self.model.config.reset_every;
        if every > 0 && self.step.is_multiple_of(every) {
            let d = self.model.config.code_dim;
            let z = Tensor::new(vec![latents.len() / d, d], latents)?;
            reset_codes = self
                .model
                .codebook
                .code_reset(&z, self.model.config.reset_min_usage, &mut self.rng)?;
        }
        terms.frames /= n;
        terms.vel /= n;
        terms.acc /= n;
        terms.bone /= n;
        Ok(VaeStepReport {
            step,
            lr,
            loss: loss_value,
            recon_loss: recon / n,
            commit_loss: commit / n,
            terms,
            reset_codes,
        })
    }

    fn seed_codebook(&mut self, batch: &[Tensor<T>]) -> Result<()> {
        let d = self.model.config.code_dim;
        let mut rows = Vec::new();
        for clip in batch {
            rows.extend_from_slice(self.model.encode_normalized(clip)?.data());
        }
        let latents = Tensor::new(vec![rows.len() / d, d], rows)?;
        let cfg = &self.model.config;
        self.model.codebook = Codebook::init_from_latents(
            &latents,
            cfg.codebook_size,
            self.config.codebook_jitter,
            cfg.ema_decay,
            cfg.ema_epsilon,
            &mut self.rng,
        )?;
        self.codebook_seeded = true;
        Ok(())
    }

    /// Runs `config.steps` steps over `clips` (raw motion), calling
    /// `on_step` after each one.
    pub fn fit(&mut self, clips: &[Tensor<T>], mut on_step: impl FnMut(&VaeStepReport)) -> Result<VaeStepReport> {
        let mut last = None;
        while self.step < self.config.steps {
            let batch = self.next_batch(clips)?;
            let report = self.step(&batch)?;
            on_step(&report);
            last = Some(report);
        }
        last.ok_or_else(|| Error::InvalidArgument("zero training steps".into()))
    }
}
