//! Perplexity-differential distillation of code-review corpora.
//!
//! A review comment is *desired* when conditioning a language model on it
//! makes the recorded code fix less perplexing. The crate scores every
//! corpus entry against one or more log-probability backends, takes the
//! median score across backends, and emits supervised fine-tuning and KTO
//! alignment datasets, together with evaluation tooling (identification
//! metrics, baselines, BLEU-4, chi-squared agreement).

pub mod backend;
pub mod cli;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod kto;
pub mod scoring;

pub use error::{Error, Result};
