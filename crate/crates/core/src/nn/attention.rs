use super::ops::{linear, linear_backward, matmul, softmax_rows, softmax_rows_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pre-softmax score given to masked key positions. Large and finite so a
/// fully masked row still normalizes without NaN; `exp` of it underflows to
/// exactly zero next to any unmasked score.
pub const MASK_VALUE: f64 = -1e9;

/// Weight `[in, out]` and bias `[out]` of an affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LinearParams {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, &self.bias)
    }

    pub fn add_assign(&mut self, other: &LinearParams) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        self.bias.add_assign(&other.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn zeros(d_model: usize) -> Self {
        AttentionParams {
            query: LinearParams::zeros(d_model, d_model),
            key: LinearParams::zeros(d_model, d_model),
            value: LinearParams::zeros(d_model, d_model),
            output: LinearParams::zeros(d_model, d_model),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &AttentionParams) -> Result<()> {
        self.query.add_assign(&other.query)?;
        self.key.add_assign(&other.key)?;
        self.value.add_assign(&other.value)?;
        self.output.add_assign(&other.output)
    }
}

pub struct AttentionCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, `[Tq, Tk]`.
    pub probs: Vec<Tensor>,
    merged: Tensor,
}

pub struct AttentionGrads {
    pub params: AttentionParams,
    pub q_in: Tensor,
    pub kv_in: Tensor,
}

/// Scaled dot-product attention with `n_heads` heads. `key_mask[j] == 0`
/// excludes key position `j`.
pub fn multi_head_attention(
    q_in: &Tensor,
    kv_in: &Tensor,
    key_mask: &[u8],
    params: &AttentionParams,
    n_heads: usize,
) -> Result<(Tensor, AttentionCache)> {
    let (tq, d) = q_in.dims2("multi_head_attention")?;
    let (tk, d2) = kv_in.dims2("multi_head_attention")?;
    if d != d2 {
        return Err(Error::Shape {
            op: "multi_head_attention",
            detail: format!("query width {d} vs key/value width {d2}"),
        });
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Shape {
            op: "multi_head_attention",
            detail: format!("{n_heads} heads do not divide width {d}"),
        });
    }
    if key_mask.len() != tk {
        return Err(Error::Shape {
            op: "multi_head_attention",
            detail: format!("mask of length {} for {tk} key positions", key_mask.len()),
        });
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = params.query.forward(q_in)?;
    let k = params.key.forward(kv_in)?;
    let v = params.value.forward(kv_in)?;
    let mut merged = Tensor::zeros(&[tq, d]);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = q.column_block(h * dh, dh);
        let kh = k.column_block(h * dh, dh);
        let vh = v.column_block(h * dh, dh);
        let mut scores = matmul(&qh, &kh.transpose())?.scale(scale);
        for i in 0..tq {
            let row = scores.row_mut(i);
            for (s, &m) in row.iter_mut().zip(key_mask) {
                if m == 0 {
                    *s = MASK_VALUE;
                }
            }
        }
        let p = softmax_rows(&scores);
        merged.set_column_block(h * dh, &matmul(&p, &vh)?);
        probs.push(p);
    }
    let out = params.output.forward(&merged)?;
    Ok((
        out,
        AttentionCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            probs,
            merged,
        },
    ))
}

pub fn multi_head_attention_backward(
    grad_out: &Tensor,
    params: &AttentionParams,
    cache: &AttentionCache,
) -> Result<AttentionGrads> {
    let n_heads = cache.probs.len();
    let d = cache.q.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let out_grads = linear_backward(&cache.merged, &params.output.weight, grad_out)?;
    let d_merged = out_grads.input;
    let mut dq = cache.q.zeros_like();
    let mut dk = cache.k.zeros_like();
    let mut dv = cache.v.zeros_like();
    for (h, p) in cache.probs.iter().enumerate() {
        let qh = cache.q.column_block(h * dh, dh);
        let kh = cache.k.column_block(h * dh, dh);
        let vh = cache.v.column_block(h * dh, dh);
        let d_oh = d_merged.column_block(h * dh, dh);
        let dp = matmul(&d_oh, &vh.transpose())?;
        dv.set_column_block(h * dh, &matmul(&p.transpose(), &d_oh)?);
        let ds = softmax_rows_backward(p, &dp).scale(scale);
        dq.set_column_block(h * dh, &matmul(&ds, &kh)?);
        dk.set_column_block(h * dh, &matmul(&ds.transpose(), &qh)?);
    }
    let gq = linear_backward(&cache.q_in, &params.query.weight, &dq)?;
    let gk = linear_backward(&cache.kv_in, &params.key.weight, &dk)?;
    let gv = linear_backward(&cache.kv_in, &params.value.weight, &dv)?;
    let kv_in = gk.input.add(&gv.input)?;
    Ok(AttentionGrads {
        params: AttentionParams {
            query: LinearParams {
                weight: gq.weight,
                bias: gq.bias,
            },
            key: LinearParams {
                weight: gk.weight,
                bias: gk.bias,
            },
            value: LinearParams {
                weight: gv.weight,
                bias: gv.bias,
            },
            output: LinearParams {
                weight: out_grads.weight,
                bias: out_grads.bias,
            },
        },
        q_in: gq.input,
        kv_in,
    })
}
