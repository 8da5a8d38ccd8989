//! Text-to-motion generation over residual-quantized motion codes: a
//! convolutional tokenizer with a shared-codebook residual quantizer, and a
//! two-tier transformer that generates code matrices under classifier-free
//! guidance. Built on the reverse-mode autodiff engine in [`tensor`].
//!
//! The guide under `book/` walks through each piece; its snippets run as
//! doc-tests.

pub mod checks;
pub mod data;
pub mod error;
pub mod gpt;
pub mod io;
pub mod pipeline;
pub mod rvq;
pub mod sampling;
pub mod vae;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/quantizer.md")]
    pub struct Quantizer;
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    pub struct Tokenizer;
    #[doc = include_str!("../../../book/src/generator.md")]
    pub struct Generator;
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub struct Sampling;
    #[doc = include_str!("../../../book/src/workflow.md")]
    pub struct Workflow;
}
