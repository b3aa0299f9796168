//! Embeddings, post-norm transformer encoder layers and a linear head on the
//! CLS position, with a hand-written backward pass.
//!
//! ```text
//! ids ─ token + position + segment ─ LN ─ dropout ─┐
//!   ┌──────────────────────────────────────────────┘
//!   └ n × [ h ← LN(h + drop(MHA(h)));  h ← LN(h + drop(W₂·gelu(W₁·h))) ]
//!   └ logits = head(h[0])
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    apply_dropout_mask, gelu, gelu_backward, layer_norm, layer_norm_backward, linear_backward,
    multi_head_attention, multi_head_attention_backward, weighted_cross_entropy, AttentionCache,
    AttentionParams, LayerNormCache, LinearParams, Tensor,
};
use crate::tokenizer::Encoding;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl NormParams {
    fn new(d: usize) -> Self {
        NormParams {
            gain: Tensor::filled(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }

    fn zeros_like(&self) -> Self {
        NormParams {
            gain: self.gain.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    fn add_assign(&mut self, other: &NormParams) -> Result<()> {
        self.gain.add_assign(&other.gain)?;
        self.bias.add_assign(&other.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub token: Tensor,
    pub position: Tensor,
    pub segment: Tensor,
    pub norm: NormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: AttentionParams,
    pub attention_norm: NormParams,
    pub ff_in: LinearParams,
    pub ff_out: LinearParams,
    pub output_norm: NormParams,
}

impl EncoderLayer {
    fn zeros_like(&self) -> Self {
        EncoderLayer {
            attention: self.attention.zeros_like(),
            attention_norm: self.attention_norm.zeros_like(),
            ff_in: self.ff_in.zeros_like(),
            ff_out: self.ff_out.zeros_like(),
            output_norm: self.output_norm.zeros_like(),
        }
    }

    fn add_assign(&mut self, other: &EncoderLayer) -> Result<()> {
        self.attention.add_assign(&other.attention)?;
        self.attention_norm.add_assign(&other.attention_norm)?;
        self.ff_in.add_assign(&other.ff_in)?;
        self.ff_out.add_assign(&other.ff_out)?;
        self.output_norm.add_assign(&other.output_norm)
    }
}

/// All trainable tensors of the classifier. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embeddings: Embeddings,
    pub layers: Vec<EncoderLayer>,
    pub head: LinearParams,
}

impl Weights {
    pub fn zeros_like(&self) -> Self {
        Weights {
            embeddings: Embeddings {
                token: self.embeddings.token.zeros_like(),
                position: self.embeddings.position.zeros_like(),
                segment: self.embeddings.segment.zeros_like(),
                norm: self.embeddings.norm.zeros_like(),
            },
            layers: self.layers.iter().map(EncoderLayer::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// Named tensors in the canonical order used for checkpoints and the optimizer.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let e = &self.embeddings;
        let mut out = vec![
            ("embeddings.token".to_string(), &e.token),
            ("embeddings.position".to_string(), &e.position),
            ("embeddings.segment".to_string(), &e.segment),
            ("embeddings.norm.gain".to_string(), &e.norm.gain),
            ("embeddings.norm.bias".to_string(), &e.norm.bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            let a = &l.attention;
            out.extend([
                (format!("{p}.attention.query.weight"), &a.query.weight),
                (format!("{p}.attention.query.bias"), &a.query.bias),
                (format!("{p}.attention.key.weight"), &a.key.weight),
                (format!("{p}.attention.key.bias"), &a.key.bias),
                (format!("{p}.attention.value.weight"), &a.value.weight),
                (format!("{p}.attention.value.bias"), &a.value.bias),
                (format!("{p}.attention.output.weight"), &a.output.weight),
                (format!("{p}.attention.output.bias"), &a.output.bias),
                (format!("{p}.attention_norm.gain"), &l.attention_norm.gain),
                (format!("{p}.attention_norm.bias"), &l.attention_norm.bias),
                (format!("{p}.ff_in.weight"), &l.ff_in.weight),
                (format!("{p}.ff_in.bias"), &l.ff_in.bias),
                (format!("{p}.ff_out.weight"), &l.ff_out.weight),
                (format!("{p}.ff_out.bias"), &l.ff_out.bias),
                (format!("{p}.output_norm.gain"), &l.output_norm.gain),
                (format!("{p}.output_norm.bias"), &l.output_norm.bias),
            ]);
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    /// Mutable tensors in the same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.embeddings;
        let mut out = vec![
            &mut e.token,
            &mut e.position,
            &mut e.segment,
            &mut e.norm.gain,
            &mut e.norm.bias,
        ];
        for l in &mut self.layers {
            let a = &mut l.attention;
            out.extend([
                &mut a.query.weight,
                &mut a.query.bias,
                &mut a.key.weight,
                &mut a.key.bias,
                &mut a.value.weight,
                &mut a.value.bias,
                &mut a.output.weight,
                &mut a.output.bias,
                &mut l.attention_norm.gain,
                &mut l.attention_norm.bias,
                &mut l.ff_in.weight,
                &mut l.ff_in.bias,
                &mut l.ff_out.weight,
                &mut l.ff_out.bias,
                &mut l.output_norm.gain,
                &mut l.output_norm.bias,
            ]);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds one example's gradients.
    pub fn accumulate(&mut self, g: &ExampleGrads) -> Result<()> {
        let e = &mut self.embeddings;
        let d = e.token.cols();
        for (t, row) in g.embedded.data().chunks(d).enumerate() {
            let id = g.token_ids[t] as usize;
            let seg = g.segment_ids[t] as usize;
            for (dst, v) in e.token.row_mut(id).iter_mut().zip(row) {
                *dst += v;
            }
            for (dst, v) in e.position.row_mut(t).iter_mut().zip(row) {
                *dst += v;
            }
            for (dst, v) in e.segment.row_mut(seg).iter_mut().zip(row) {
                *dst += v;
            }
        }
        e.norm.add_assign(&g.embedding_norm)?;
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            l.add_assign(gl)?;
        }
        self.head.add_assign(&g.head)
    }
}

/// Gradients from a single example. Embedding tables are represented by the
/// gradient of the summed embedding rows, scattered on accumulation.
pub struct ExampleGrads {
    embedded: Tensor,
    token_ids: Vec<u32>,
    segment_ids: Vec<u8>,
    embedding_norm: NormParams,
    layers: Vec<EncoderLayer>,
    head: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderClassifier {
    pub config: ModelConfig,
    pub weights: Weights,
}

/// Source of dropout masks for one example during training.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSeed {
    pub seed: u64,
    pub step: u64,
    pub index: u64,
}

impl DropoutSeed {
    fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.step.to_le_bytes());
        key[16..24].copy_from_slice(&self.index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

struct LayerCache {
    input: Tensor,
    attention: AttentionCache,
    attention_drop: Option<Vec<bool>>,
    attention_norm: LayerNormCache,
    normed: Tensor,
    ff_hidden: Tensor,
    activated: Tensor,
    ff_drop: Option<Vec<bool>>,
    output_norm: LayerNormCache,
}

pub struct ForwardCache {
    token_ids: Vec<u32>,
    segment_ids: Vec<u8>,
    embedding_norm: LayerNormCache,
    embedding_drop: Option<Vec<bool>>,
    layers: Vec<LayerCache>,
    cls: Tensor,
}

fn truncated_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            data.push(v);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() >= rate).collect()
}

impl EncoderClassifier {
    /// Weights from a truncated normal (σ = 0.02, cut at 2σ), biases zero,
    /// layer-norm gains one. Deterministic in `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.d_model;
        let lin = |rng: &mut ChaCha8Rng, d_in: usize, d_out: usize| LinearParams {
            weight: truncated_normal(rng, &[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        };
        let embeddings = Embeddings {
            token: truncated_normal(&mut rng, &[config.vocab_size, d]),
            position: truncated_normal(&mut rng, &[config.max_len, d]),
            segment: truncated_normal(&mut rng, &[2, d]),
            norm: NormParams::new(d),
        };
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                attention: AttentionParams {
                    query: lin(&mut rng, d, d),
                    key: lin(&mut rng, d, d),
                    value: lin(&mut rng, d, d),
                    output: lin(&mut rng, d, d),
                },
                attention_norm: NormParams::new(d),
                ff_in: lin(&mut rng, d, config.d_ff),
                ff_out: lin(&mut rng, config.d_ff, d),
                output_norm: NormParams::new(d),
            })
            .collect();
        let head = lin(&mut rng, d, config.n_classes);
        Ok(EncoderClassifier {
            config,
            weights: Weights {
                embeddings,
                layers,
                head,
            },
        })
    }

    fn check_encoding(&self, enc: &Encoding) -> Result<usize> {
        let n = enc.token_ids.len();
        if enc.segment_ids.len() != n || enc.attention_mask.len() != n {
            return Err(Error::Encoding(
                "token, segment and mask sequences differ in length".into(),
            ));
        }
        if let Some(&bad) = enc
            .token_ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::Encoding(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        if enc.segment_ids.iter().any(|&s| s > 1) {
            return Err(Error::Encoding("segment ids must be 0 or 1".into()));
        }
        if enc.attention_mask.first() != Some(&1) {
            return Err(Error::Encoding(
                "position 0 must be an unmasked [CLS]".into(),
            ));
        }
        // Positions after the last real token cannot affect position 0.
        let span = enc
            .attention_mask
            .iter()
            .rposition(|&m| m == 1)
            .unwrap_or(0)
            + 1;
        if span > self.config.max_len {
            return Err(Error::Encoding(format!(
                "{span} real tokens for a model with max_len {}",
                self.config.max_len
            )));
        }
        Ok(span)
    }

    /// Logits for one encoding, plus what the backward pass needs.
    /// With `dropout = None` the pass is deterministic inference.
    pub fn forward_example(
        &self,
        enc: &Encoding,
        dropout: Option<DropoutSeed>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let span = self.check_encoding(enc)?;
        let cfg = &self.config;
        let d = cfg.d_model;
        let rate = cfg.dropout;
        let mut rng = dropout.filter(|_| rate > 0.0).map(DropoutSeed::rng);
        let w = &self.weights;

        let mut embedded = Tensor::zeros(&[span, d]);
        for t in 0..span {
            let tok = w.embeddings.token.row(enc.token_ids[t] as usize);
            let pos = w.embeddings.position.row(t);
            let seg = w.embeddings.segment.row(enc.segment_ids[t] as usize);
            for (j, out) in embedded.row_mut(t).iter_mut().enumerate() {
                *out = tok[j] + pos[j] + seg[j];
            }
        }
        let (mut h, embedding_norm) = layer_norm(
            &embedded,
            &w.embeddings.norm.gain,
            &w.embeddings.norm.bias,
            cfg.layer_norm_eps,
        )?;
        let embedding_drop = rng.as_mut().map(|r| dropout_mask(r, h.len(), rate));
        if let Some(mask) = &embedding_drop {
            h = apply_dropout_mask(&h, mask, rate);
        }

        let key_mask = &enc.attention_mask[..span];
        let mut layers = Vec::with_capacity(w.layers.len());
        for layer in &w.layers {
            let input = h;
            let (attended, attention) =
                multi_head_attention(&input, &input, key_mask, &layer.attention, cfg.n_heads)?;
            let attention_drop = rng.as_mut().map(|r| dropout_mask(r, attended.len(), rate));
            let attended = match &attention_drop {
                Some(mask) => apply_dropout_mask(&attended, mask, rate),
                None => attended,
            };
            let (normed, attention_norm) = layer_norm(
                &input.add(&attended)?,
                &layer.attention_norm.gain,
                &layer.attention_norm.bias,
                cfg.layer_norm_eps,
            )?;
            let ff_hidden = layer.ff_in.forward(&normed)?;
            let activated = gelu(&ff_hidden);
            let ff_out = layer.ff_out.forward(&activated)?;
            let ff_drop = rng.as_mut().map(|r| dropout_mask(r, ff_out.len(), rate));
            let ff_out = match &ff_drop {
                Some(mask) => apply_dropout_mask(&ff_out, mask, rate),
                None => ff_out,
            };
            let (out, output_norm) = layer_norm(
                &normed.add(&ff_out)?,
                &layer.output_norm.gain,
                &layer.output_norm.bias,
                cfg.layer_norm_eps,
            )?;
            layers.push(LayerCache {
                input,
                attention,
                attention_drop,
                attention_norm,
                normed,
                ff_hidden,
                activated,
                ff_drop,
                output_norm,
            });
            h = out;
        }
        let cls = h.take_rows(1);
        let logits = w.head.forward(&cls)?;
        logits.ensure_finite("logits")?;
        Ok((
            logits.into_data(),
            ForwardCache {
                token_ids: enc.token_ids[..span].to_vec(),
                segment_ids: enc.segment_ids[..span].to_vec(),
                embedding_norm,
                embedding_drop,
                layers,
                cls,
            },
        ))
    }

    /// Gradients of a scalar loss given `d loss / d logits` for one example.
    pub fn backward_example(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<ExampleGrads> {
        let cfg = &self.config;
        let rate = cfg.dropout;
        let w = &self.weights;
        let span = cache.token_ids.len();
        let d = cfg.d_model;

        let dlogits = Tensor::new(vec![1, dlogits.len()], dlogits.to_vec())?;
        let head = linear_backward(&cache.cls, &w.head.weight, &dlogits)?;
        let mut dh = Tensor::zeros(&[span, d]);
        dh.row_mut(0).copy_from_slice(head.input.data());

        let mut layer_grads = Vec::with_capacity(w.layers.len());
        for (layer, lc) in w.layers.iter().zip(&cache.layers).rev() {
            let out_norm = layer_norm_backward(&dh, &layer.output_norm.gain, &lc.output_norm)?;
            let mut d_ff_out = out_norm.input.clone();
            if let Some(mask) = &lc.ff_drop {
                d_ff_out = apply_dropout_mask(&d_ff_out, mask, rate);
            }
            let ff_out = linear_backward(&lc.activated, &layer.ff_out.weight, &d_ff_out)?;
            let d_hidden = gelu_backward(&lc.ff_hidden, &ff_out.input);
            let ff_in = linear_backward(&lc.normed, &layer.ff_in.weight, &d_hidden)?;
            let d_normed = out_norm.input.add(&ff_in.input)?;

            let attn_norm =
                layer_norm_backward(&d_normed, &layer.attention_norm.gain, &lc.attention_norm)?;
            let mut d_attended = attn_norm.input.clone();
            if let Some(mask) = &lc.attention_drop {
                d_attended = apply_dropout_mask(&d_attended, mask, rate);
            }
            let attn = multi_head_attention_backward(&d_attended, &layer.attention, &lc.attention)?;
            let mut d_input = attn_norm.input;
            d_input.add_assign(&attn.q_in)?;
            d_input.add_assign(&attn.kv_in)?;
            debug_assert_eq!(d_input.shape(), lc.input.shape());
            dh = d_input;

            layer_grads.push(EncoderLayer {
                attention: attn.params,
                attention_norm: NormParams {
                    gain: attn_norm.gain,
                    bias: attn_norm.bias,
                },
                ff_in: LinearParams {
                    weight: ff_in.weight,
                    bias: ff_in.bias,
                },
                ff_out: LinearParams {
                    weight: ff_out.weight,
                    bias: ff_out.bias,
                },
                output_norm: NormParams {
                    gain: out_norm.gain,
                    bias: out_norm.bias,
                },
            });
        }
        layer_grads.reverse();

        if let Some(mask) = &cache.embedding_drop {
            dh = apply_dropout_mask(&dh, mask, rate);
        }
        let emb_norm = layer_norm_backward(&dh, &w.embeddings.norm.gain, &cache.embedding_norm)?;
        Ok(ExampleGrads {
            embedded: emb_norm.input,
            token_ids: cache.token_ids.clone(),
            segment_ids: cache.segment_ids.clone(),
            embedding_norm: NormParams {
                gain: emb_norm.gain,
                bias: emb_norm.bias,
            },
            layers: layer_grads,
            head: LinearParams {
                weight: head.weight,
                bias: head.bias,
            },
        })
    }

    /// Inference logits `[B, n_classes]`. Rows are computed independently, so
    /// a single example gives bit-identical values to its row in any batch.
    pub fn forward(&self, batch: &[Encoding]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|enc| self.forward_example(enc, None).map(|(logits, _)| logits))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.n_classes]));
        }
        Tensor::from_rows(&rows)
    }

    /// Mean class-weighted cross-entropy over `batch` and its gradient.
    ///
    /// Examples run in parallel; their gradients are summed in batch order so
    /// the result does not depend on thread scheduling. With `dropout` set,
    /// example `i` draws its masks from `(seed, step, i)`.
    pub fn loss_and_gradients(
        &self,
        batch: &[Encoding],
        labels: &[usize],
        class_weights: &[f64],
        dropout: Option<(u64, u64)>,
    ) -> Result<(f64, Weights)> {
        let passes: Vec<(Vec<f64>, ForwardCache)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, enc)| {
                let seed = dropout.map(|(seed, step)| DropoutSeed {
                    seed,
                    step,
                    index: i as u64,
                });
                self.forward_example(enc, seed)
            })
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = passes.iter().map(|(l, _)| l.clone()).collect();
        let logits = Tensor::from_rows(&rows)?;
        let (loss, dlogits) = weighted_cross_entropy(&logits, labels, class_weights)?;
        let grads: Vec<ExampleGrads> = passes
            .par_iter()
            .enumerate()
            .map(|(i, (_, cache))| self.backward_example(cache, dlogits.row(i)))
            .collect::<Result<_>>()?;
        let mut total = self.weights.zeros_like();
        for g in &grads {
            total.accumulate(g)?;
        }
        Ok((loss, total))
    }

    pub fn zero_head(&mut self) {
        for v in self.weights.head.weight.data_mut() {
            *v = 0.0;
        }
        for v in self.weights.head.bias.data_mut() {
            *v = 0.0;
        }
    }
}
