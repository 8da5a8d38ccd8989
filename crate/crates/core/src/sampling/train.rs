use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{corrupt_codes, dropout_condition, CorruptionMode, TrainAugConfig};
use crate::io::Config;
use crate::error::{invalid, Error, Result};
use crate::gpt::{Dropout, GptModel};
use crate::rvq::CodeMatrix;
use crate::tensor::{AdamW, AdamWConfig, LrSchedule, Real, Tape, Tensor};

/// One caption/code-matrix training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GptExample<T> {
    pub cond: Tensor<T>,
    pub codes: CodeMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub hold_steps: usize,
    pub weight_decay: f64,
    pub aug: TrainAugConfig,
    pub seed: u64,
}

impl Default for GptTrainConfig {
    fn default() -> Self {
        GptTrainConfig {
            steps: 100_000,
            batch_size: 128,
            lr: 1e-4,
            warmup_steps: 1000,
            hold_steps: 0,
            weight_decay: 0.0,
            aug: TrainAugConfig::default(),
            seed: 0,
        }
    }
}

impl GptTrainConfig {
    /// Reads `gpt.*` training keys and `aug.*` augmentation keys.
    pub fn from_config(c: &Config, seed: u64) -> Result<Self> {
        let d = Self::default();
        let aug = TrainAugConfig {
            tau: c.get_or("aug.tau", d.aug.tau)?,
            mode: c.get_str("aug.corruption").map_or(Ok(d.aug.mode), CorruptionMode::parse)?,
            p_drop: c.get_or("aug.p_drop", d.aug.p_drop)?,
        };
        aug.validate()?;
        Ok(GptTrainConfig {
            steps: c.get_or("gpt.steps", d.steps)?,
            batch_size: c.get_or("gpt.batch_size", d.batch_size)?,
            lr: c.get_or("gpt.lr", d.lr)?,
            warmup_steps: c.get_or("gpt.warmup_steps", d.warmup_steps)?,
            hold_steps: c.get_or("gpt.hold_steps", d.hold_steps)?,
            weight_decay: c.get_or("gpt.weight_decay", d.weight_decay)?,
            aug,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptStepReport {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of `nll + β·stop`.
    pub loss: f64,
    pub nll: f64,
    pub stop: f64,
    /// Summed NLL over summed token count.
    pub per_token_nll: f64,
    pub corrupted_rows: usize,
    pub dropped_conditions: usize,
}

// Separate streams per consumer keep augmentation draws independent of
// dropout masks and batch order.
const BATCH_STREAM: u64 = 1;
const AUG_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct GptTrainer<T> {
    pub model: GptModel<T>,
    pub config: GptTrainConfig,
    opt: AdamW,
    schedule: LrSchedule,
    step: usize,
    batch_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    dropout: Dropout,
    order: Vec<usize>,
    cursor: usize,
}

impl<T: Real> GptTrainer<T> {
    pub fn new(model: GptModel<T>, config: GptTrainConfig) -> Result<Self> {
        config.aug.validate()?;
        if config.batch_size == 0 {
            return invalid("batch_size must be >= 1");
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
        let dropout = Dropout {
            rate: model.config.dropout,
            rng: stream(config.seed, DROPOUT_STREAM),
        };
        Ok(GptTrainer {
            opt,
            schedule,
            step: 0,
            batch_rng: stream(config.seed, BATCH_STREAM),
            aug_rng: stream(config.seed, AUG_STREAM),
            dropout,
            order: Vec::new(),
            cursor: 0,
            model,
            config,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Indices of the next batch; examples are visited in reshuffled epochs.
    pub fn next_batch(&mut self, examples: usize) -> Result<Vec<usize>> {
        if examples == 0 {
            return invalid("no training examples");
        }
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..examples).collect();
                self.order.shuffle(&mut self.batch_rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        Ok(batch)
    }

    /// Condition dropout and code corruption on the inputs, clean targets,
    /// teacher-forced `nll + β·stop` averaged over the batch, one AdamW step.
    pub fn step(&mut self, batch: &[&GptExample<T>]) -> Result<GptStepReport> {
        if batch.is_empty() {
            return invalid("empty batch");
        }
        let step = self.step;
        let aug = self.config.aug;
        let k = self.model.config.codebook_size;
        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape, true);
        let mut total = None;
        let (mut nll, mut stop, mut tokens) = (0.0, 0.0, 0usize);
        let (mut corrupted_rows, mut dropped_conditions) = (0, 0);
        for (i, ex) in batch.iter().enumerate() {
            let (cond, dropped) = dropout_condition(&ex.cond, aug.p_drop, &mut self.aug_rng);
            let (inputs, touched) = corrupt_codes(&ex.codes, aug.tau, aug.mode, k, &mut self.aug_rng)?;
            dropped_conditions += dropped as usize;
            corrupted_rows += touched.iter().filter(|&&t| t).count();
            let drop = (self.dropout.rate > 0.0).then_some(&mut self.dropout);
            let loss = self
                .model
                .loss(&mut tape, &p, &cond, &inputs, &ex.codes, drop)
                .map_err(|e| match e {
                    Error::NonFinite { op } => Error::Diverged {
                        step,
                        detail: format!("batch item {i}: non-finite value in {op}"),
                    },
                    other => other,
                })?;
            nll += loss.nll_value;
            stop += loss.stop_value;
            tokens += loss.tokens;
            total = Some(match total {
                None => loss.total,
                Some(acc) => tape.add(acc, loss.total)?,
            });
        }
        let n = batch.len() as f64;
        let loss = tape.scale(total.expect("non-empty batch"), 1.0 / n)?;
        let loss_value = tape.value(loss).item().as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss_value} (nll {nll}, stop {stop})"),
            });
        }
        let mut grads = tape.backward(loss)?;
        let grads = p.collect(&mut grads);
        let lr = self.schedule.lr(step);
        self.opt.step(&mut self.model.params, &grads, lr).map_err(|e| match e {
            Error::NonFiniteGradient { param } => Error::Diverged {
                step,
                detail: format!("non-finite gradient for `{param}` (nll {nll}, stop {stop})"),
            },
            other => other,
        })?;
        self.step += 1;
        Ok(GptStepReport {
            step,
            lr,
            loss: loss_value,
            nll: nll / n,
            stop: stop / n,
            per_token_nll: nll / tokens as f64,
            corrupted_rows,
            dropped_conditions,
        })
    }

    pub fn fit(&mut self, examples: &[GptExample<T>], mut on_step: impl FnMut(&GptStepReport)) -> Result<GptStepReport> {
        let mut last = None;
        while self.step < self.config.steps {
            let idx = self.next_batch(examples.len())?;
            let batch: Vec<&GptExample<T>> = idx.iter().map(|&i| &examples[i]).collect();
            let report = self.step(&batch)?;
            on_step(&report);
            last = Some(report);
        }
        last.ok_or_else(|| Error::InvalidArgument("zero training steps".into()))
    }
}
