//! Training-time augmentation and the GPT training loop, plus guided
//! sampling of new code matrices.

mod augment;
mod generate;
mod guidance;
mod train;

pub use augment::{corrupt_codes, dropout_condition, CorruptionMode, TrainAugConfig};
pub use generate::{generate, Generation, GenerationConfig, StopPolicy, GENERATION_STREAM};
pub use guidance::cfg_mix;
pub use train::{GptExample, GptStepReport, GptTrainConfig, GptTrainer};
