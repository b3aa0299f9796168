//! Context-conditioned sentiment classification.
//!
//! A classifier here sees a topical context together with the text being
//! judged, encoded as `[CLS] context [SEP] text [SEP]`, and predicts the
//! sentiment of the text toward that topic. The crate bundles everything
//! needed to build and evaluate such a classifier at desk scale:
//!
//! - [`data`]: pair datasets, statistics, inverse-frequency weights, stratified splits
//! - [`tokenizer`]: word-level vocabulary and pair encoding
//! - [`nn`]: dense tensors with hand-written backward passes
//! - [`model`]: the encoder classifier and its checkpoint format
//! - [`training`]: class-weighted training with early stopping on macro-F1
//! - [`metrics`]: confusion matrices, per-class and aggregate scores, report rendering
//! - [`labeling`]: LLM-assisted relabeling with structured responses
//! - [`benchmark`]: classifier adapters, synthetic context-dependence corpora, comparisons

pub mod benchmark;
pub mod data;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod nn;
mod pool;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
