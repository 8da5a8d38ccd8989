//! Dataset encoding, evaluation metrics and the attention-cost benchmark.

mod bench;
mod encode;
mod eval;
mod metrics;
mod run;

pub use bench::{bench_attention, bench_csv, default_sweep, BenchPoint, BenchRow};
pub use encode::{encode_dataset, read_code_archive, write_code_archive};
pub use eval::{eval_model, EvalReport, GenerationMetrics};
pub use metrics::{code_usage, exact_match_fraction, mpjpe, recon_smooth_l1, residual_curve};
pub use run::{fit_gpt, fit_vae, gpt_config_for, gpt_examples};
