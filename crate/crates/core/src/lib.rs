//! Belief-state probing toolkit for causal language models.
//!
//! The crate covers the whole analysis path for paired true/false-belief
//! trials:
//!
//! - [`corpus`]: trial materials, validation and the two control conditions.
//! - [`tokenizer`]: byte-level BPE compatible with the GPT-2 vocabulary.
//! - [`runtime`]: a CPU GPT-2 forward pass that captures the residual stream
//!   at every block boundary, plus the capture interchange format.
//! - [`behavior`]: two-alternative forced-choice scoring from final logits.
//! - [`selectivity`]: per-dimension Mann-Whitney tests on question-averaged
//!   embeddings and the exponential selectivity/performance fit.
//! - [`decoder`]: L2-regularised logistic regression with pair-preserving
//!   repeated hold-out.
//! - [`report`]: group statistics and deterministic SVG/JSON reports.

pub mod behavior;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod report;
pub mod runtime;
pub mod selectivity;
pub mod tokenizer;

pub use error::{Error, Result};
