//! Two-tier autoregressive model over code matrices: a temporal tier that
//! summarizes the condition and past rows into one context per latent
//! frame, and a residual tier that emits the codes of a row depth by depth.

mod checkpoint;
mod config;
pub mod cost;
mod model;

pub use config::GptConfig;
pub(crate) use model::sigmoid;
pub use model::{stop_labels, stop_loss, Dropout, GptLoss, GptModel, TemporalState};
