use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 8000,
            max_len: 256,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ff: 512,
            n_classes: 3,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_len < 8 {
            return fail(format!("max_len must be at least 8, got {}", self.max_len));
        }
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} is too small", self.vocab_size));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return fail("d_model, d_ff and n_layers must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.n_classes < 2 {
            return fail(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}
