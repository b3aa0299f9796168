//! Binary checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "CTXSENT\0"
//! version      u32       1
//! header_len   u64
//! header       UTF-8 JSON {input_mode, metadata, model, schema, vocab_fingerprint}
//! n_tensors    u32
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   dtype      u8        1 = f64
//!   ndim       u32
//!   dims       u64 × ndim
//!   values     f64 × prod(dims)
//! ```
//!
//! Model tensors come first in [`Weights::named`] order; any further tensors
//! (optimizer moments, best-so-far weights) follow under their own prefixes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderClassifier, InputMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTXSENT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderClassifier,
    pub input_mode: InputMode,
    pub schema: String,
    pub vocab_fingerprint: String,
    /// Free-form training metadata (epoch, best macro-F1, seeds, ...).
    pub metadata: serde_json::Value,
    pub extra: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_mode: InputMode,
    metadata: serde_json::Value,
    model: ModelConfig,
    schema: String,
    vocab_fingerprint: String,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor), String> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let dtype = self.u8()?;
        if dtype != DTYPE_F64 {
            return Err(format!("tensor `{name}` has unsupported dtype {dtype}"));
        }
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("tensor `{name}` is too large"))?;
        let raw = self.take(n.checked_mul(8).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn new(
        model: EncoderClassifier,
        input_mode: InputMode,
        schema: &str,
        vocab_fingerprint: &str,
    ) -> Self {
        Checkpoint {
            model,
            input_mode,
            schema: schema.to_string(),
            vocab_fingerprint: vocab_fingerprint.to_string(),
            metadata: serde_json::Value::Object(Default::default()),
            extra: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            input_mode: self.input_mode,
            metadata: self.metadata.clone(),
            model: self.model.config.clone(),
            schema: self.schema.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        })?;
        let named = self.model.weights.named();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&((named.len() + self.extra.len()) as u32).to_le_bytes());
        for (name, t) in &named {
            put_tensor(&mut out, name, t);
        }
        for (name, t) in &self.extra {
            put_tensor(&mut out, name, t);
        }
        Ok(out)
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let fail = |m: String| ckpt_err(path, m);
        if r.take(8).map_err(fail)? != CHECKPOINT_MAGIC {
            return Err(ckpt_err(path, "not a checkpoint file (bad magic)"));
        }
        let version = r.u32().map_err(fail)?;
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(
                path,
                format!("format version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let header_len = r.u64().map_err(fail)? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len).map_err(fail)?)
            .map_err(|e| ckpt_err(path, format!("bad header: {e}")))?;
        let mut model = EncoderClassifier::new(header.model)
            .map_err(|e| ckpt_err(path, format!("bad model config: {e}")))?;
        let count = r.u32().map_err(fail)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(r.tensor().map_err(fail)?);
        }
        if r.pos != bytes.len() {
            return Err(ckpt_err(path, "trailing bytes after last tensor"));
        }

        let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
        if tensors.len() < names.len() {
            return Err(ckpt_err(path, "missing model tensors"));
        }
        let extra = tensors.split_off(names.len());
        for ((expected, slot), (name, t)) in
            names.iter().zip(model.weights.tensors_mut()).zip(tensors)
        {
            if &name != expected {
                return Err(ckpt_err(
                    path,
                    format!("expected tensor `{expected}`, found `{name}`"),
                ));
            }
            if t.shape() != slot.shape() {
                return Err(ckpt_err(
                    path,
                    format!(
                        "tensor `{name}` has shape {:?}, config implies {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                ));
            }
            *slot = t;
        }
        Ok(Checkpoint {
            model,
            input_mode: header.input_mode,
            schema: header.schema,
            vocab_fingerprint: header.vocab_fingerprint,
            metadata: header.metadata,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks that the stored model matches `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model.config != expected {
            return Err(ckpt_err(path, "model config does not match the checkpoint"));
        }
        Ok(ckpt)
    }

    pub fn extra_tensor(&self, name: &str) -> Option<&Tensor> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EncoderClassifier {
        EncoderClassifier::new(ModelConfig {
            vocab_size: 16,
            max_len: 8,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            n_classes: 2,
            dropout: 0.0,
            layer_norm_eps: 1e-12,
            init_seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut ckpt = Checkpoint::new(model(), InputMode::ContextBlind, "binary", "abc");
        ckpt.metadata = serde_json::json!({"epoch": 3, "best_f1": 0.8125});
        ckpt.extra
            .push(("optim.m.0".into(), Tensor::vector(vec![0.1, -2.5e-300])));
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = Checkpoint::new(model(), InputMode::default(), "binary", "")
            .to_bytes()
            .unwrap();
        bytes[8] = 2;
        let err = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }

    #[test]
    fn truncation_and_bad_magic_rejected() {
        let bytes = Checkpoint::new(model(), InputMode::default(), "binary", "")
            .to_bytes()
            .unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT", Path::new("x")).is_err());
    }

    #[test]
    fn mismatched_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::new(model(), InputMode::default(), "binary", "")
            .save(&path)
            .unwrap();
        let other = ModelConfig {
            n_classes: 3,
            ..model().config
        };
        assert!(Checkpoint::load_for(&path, &other).is_err());
        assert!(Checkpoint::load_for(&path, &model().config).is_ok());
    }
}
