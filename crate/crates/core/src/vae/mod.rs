//! Convolutional motion autoencoder around the residual quantizer.
//!
//! Motion enters as `T×D` feature frames, is normalized per dimension,
//! compressed by `L` stride-2 stages to `⌊T/2^L⌋` latent frames, quantized
//! to an `n×R` code matrix, and decoded back by nearest upsampling.

mod checkpoint;
mod config;
mod loss;
mod model;
mod skeleton;
mod train;

pub use config::{VaeConfig, VaeTrainConfig};
pub use loss::{kinematics, recon_loss, Kinematics, LossWeights, ReconTerms};
pub use model::{Normalizer, VaeModel, VaeOutput};
pub use skeleton::SkeletonSpec;
pub use train::{VaeStepReport, VaeTrainer};
