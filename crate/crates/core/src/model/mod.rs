//! The pair-encoded encoder classifier, inference helpers and checkpoints.

mod checkpoint;
mod config;
mod encoder;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use encoder::{
    DropoutSeed, Embeddings, EncoderClassifier, EncoderLayer, ExampleGrads, ForwardCache,
    NormParams, Weights,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tokenizer::{encode_context_blind, encode_pair, Encoding, Vocab};

/// Whether a model sees the context span or a single `[UNK]` in its place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    ContextConditioned,
    ContextBlind,
}

impl InputMode {
    pub fn encode(
        self,
        vocab: &Vocab,
        context: &str,
        text: &str,
        max_len: usize,
    ) -> Result<Encoding> {
        match self {
            InputMode::ContextConditioned => encode_pair(vocab, context, text, max_len),
            InputMode::ContextBlind => encode_context_blind(vocab, text, max_len),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::ContextConditioned => "context_conditioned",
            InputMode::ContextBlind => "context_blind",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl EncoderClassifier {
    pub fn predict_encoding(&self, enc: &Encoding) -> Result<Prediction> {
        let (logits, _) = self.forward_example(enc, None)?;
        Ok(Prediction {
            label: argmax(&logits),
            probabilities: softmax(&logits),
        })
    }

    pub fn predict(
        &self,
        vocab: &Vocab,
        mode: InputMode,
        context: &str,
        text: &str,
    ) -> Result<Prediction> {
        let enc = mode.encode(vocab, context, text, self.config.max_len)?;
        self.predict_encoding(&enc)
    }
}
