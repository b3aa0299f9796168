//! TOML file listing the adapters of a comparison.
//!
//! ```toml
//! schema = "three-class"
//! max_in_flight = 4
//!
//! [[adapter]]
//! kind = "local"
//! name = "ours"
//! checkpoint = "runs/a/best.ckpt"
//! vocab = "runs/a/vocab.txt"
//!
//! [[adapter]]
//! kind = "http"
//! name = "indobert"
//! mode = "context_free"
//! endpoint = "http://localhost:8080/predict"
//! request_template = '{"inputs": "{{text}}"}'
//! response_label = "/label"
//! ```
//!
//! Relative paths are resolved against the registry file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adapters::{ClassifierAdapter, ConstantAdapter, LocalModelAdapter, OracleAdapter};
use super::http::{HttpAdapter, HttpAdapterConfig};
use crate::data::{LabelSchema, PairExample};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterSpec {
    Http(HttpAdapterConfig),
    Local {
        name: String,
        checkpoint: PathBuf,
        vocab: PathBuf,
    },
    Constant {
        name: String,
        label: String,
    },
    /// Answers with the gold label of the evaluated dataset.
    Oracle {
        name: String,
    },
}

impl AdapterSpec {
    pub fn name(&self) -> &str {
        match self {
            AdapterSpec::Http(c) => &c.name,
            AdapterSpec::Local { name, .. }
            | AdapterSpec::Constant { name, .. }
            | AdapterSpec::Oracle { name } => name,
        }
    }
}

fn default_schema() -> String {
    "three-class".into()
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(rename = "adapter", default)]
    pub adapters: Vec<AdapterSpec>,
}

impl Registry {
    pub fn parse(contents: &str) -> Result<Self> {
        let reg: Registry = toml::from_str(contents)
            .map_err(|e| Error::Config(format!("adapter registry: {e}")))?;
        if reg.max_in_flight == 0 {
            return Err(Error::Config(
                "adapter registry: max_in_flight must be at least 1".into(),
            ));
        }
        let mut names = std::collections::HashSet::new();
        for a in &reg.adapters {
            if !names.insert(a.name()) {
                return Err(Error::Config(format!(
                    "adapter registry: duplicate adapter name `{}`",
                    a.name()
                )));
            }
        }
        Ok(reg)
    }

    /// Parses the file and makes relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reg = Self::parse(&contents)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut reg.adapters {
            if let AdapterSpec::Local {
                checkpoint, vocab, ..
            } = a
            {
                *checkpoint = base.join(&*checkpoint);
                *vocab = base.join(&*vocab);
            }
        }
        Ok(reg)
    }

    pub fn label_schema(&self) -> Result<LabelSchema> {
        LabelSchema::builtin(&self.schema)
    }

    /// Instantiates every adapter. HTTP adapters are health-probed here.
    pub fn build(&self, dataset: &[PairExample]) -> Result<Vec<Box<dyn ClassifierAdapter>>> {
        let schema = self.label_schema()?;
        self.adapters
            .iter()
            .map(|spec| -> Result<Box<dyn ClassifierAdapter>> {
                Ok(match spec {
                    AdapterSpec::Http(c) => Box::new(HttpAdapter::register(c.clone(), &schema)?),
                    AdapterSpec::Local {
                        name,
                        checkpoint,
                        vocab,
                    } => Box::new(load_local_adapter(name, checkpoint, vocab, &schema)?),
                    AdapterSpec::Constant { name, label } => {
                        Box::new(ConstantAdapter::new(name, schema.resolve(label)?))
                    }
                    AdapterSpec::Oracle { name } => Box::new(OracleAdapter::new(name, dataset)),
                })
            })
            .collect()
    }
}

/// Loads a checkpoint with its vocabulary, checking that the two belong
/// together and that the model predicts `schema`.
pub fn load_local_adapter(
    name: &str,
    checkpoint: &Path,
    vocab: &Path,
    schema: &LabelSchema,
) -> Result<LocalModelAdapter> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = Vocab::load(vocab)?;
    if vocab.fingerprint() != ckpt.vocab_fingerprint {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            message: "vocabulary does not match the one the model was trained with".into(),
        });
    }
    if ckpt.schema != schema.name || ckpt.model.config.n_classes != schema.len() {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            message: format!(
                "model predicts schema `{}`, expected `{}`",
                ckpt.schema, schema.name
            ),
        });
    }
    Ok(LocalModelAdapter::new(
        name,
        ckpt.model,
        vocab,
        ckpt.input_mode,
    ))
}
