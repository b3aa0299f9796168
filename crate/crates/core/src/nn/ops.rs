//! Forward and backward passes of the dense primitives.
//!
//! Every reduction runs in a fixed sequential order so results are bitwise
//! reproducible.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `C = A · B` for `A: [m, k]`, `B: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("[{m}, {k}] · [{k2}, {n}]"),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `(dA, dB) = (dC · Bᵀ, Aᵀ · dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(grad_out, &b.transpose())?;
    let db = matmul(&a.transpose(), grad_out)?;
    Ok((da, db))
}

/// Affine map `x · W + b` with `W: [in, out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    matmul(x, weight)?.add_row_vector(bias)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (input, weight) = matmul_backward(x, weight, grad_out)?;
    Ok(LinearGrads {
        input,
        weight,
        bias: grad_out.sum_rows(),
    })
}

/// Saved values from [`layer_norm`] needed by its backward pass.
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization `gain · (x − mean) / sqrt(var + eps) + bias`
/// with the population variance.
pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (rows, cols) = x.dims2("layer_norm")?;
    if gain.len() != cols || bias.len() != cols {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!(
                "gain/bias of {}/{} for width {cols}",
                gain.len(),
                bias.len()
            ),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let mut normalized = Tensor::zeros(&[rows, cols]);
    let mut out = Tensor::zeros(&[rows, cols]);
    let mut inv_std = Vec::with_capacity(rows);
    let n = cols as f64;
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        let xhat = normalized.row_mut(i);
        for (h, v) in xhat.iter_mut().zip(row) {
            *h = (v - mean) * r;
        }
        let xhat = normalized.row(i).to_vec();
        for ((o, h), (g, b)) in out
            .row_mut(i)
            .iter_mut()
            .zip(&xhat)
            .zip(gain.data().iter().zip(bias.data()))
        {
            *o = g * h + b;
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

pub struct LayerNormGrads {
    pub input: Tensor,
    pub gain: Tensor,
    pub bias: Tensor,
}

pub fn layer_norm_backward(
    grad_out: &Tensor,
    gain: &Tensor,
    cache: &LayerNormCache,
) -> Result<LayerNormGrads> {
    let (rows, cols) = grad_out.dims2("layer_norm_backward")?;
    let n = cols as f64;
    let mut input = Tensor::zeros(&[rows, cols]);
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    for i in 0..rows {
        let dy = grad_out.row(i);
        let xhat = cache.normalized.row(i);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..cols {
            let dxhat = dy[j] * gain.data()[j];
            sum_d += dxhat;
            sum_dx += dxhat * xhat[j];
            dgain[j] += dy[j] * xhat[j];
            dbias[j] += dy[j];
        }
        let r = cache.inv_std[i];
        let row = input.row_mut(i);
        for j in 0..cols {
            let dxhat = dy[j] * gain.data()[j];
            row[j] = r / n * (n * dxhat - sum_d - xhat[j] * sum_dx);
        }
    }
    Ok(LayerNormGrads {
        input,
        gain: Tensor::vector(dgain),
        bias: Tensor::vector(dbias),
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Max-subtracted softmax along `axis` (0 or 1 for matrices, 0 for vectors).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    match (x.shape().len(), axis) {
        (1, 0) => {
            let mut out = x.clone();
            softmax_in_place(out.data_mut());
            Ok(out)
        }
        (2, 1) => Ok(softmax_rows(x)),
        (2, 0) => Ok(softmax_rows(&x.transpose()).transpose()),
        _ => Err(Error::Shape {
            op: "softmax",
            detail: format!("axis {axis} of shape {:?}", x.shape()),
        }),
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols().max(1);
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

/// Given the softmax output `y` and upstream `dy`, returns `dx` along `axis`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    match (y.shape().len(), axis) {
        (1, 0) => {
            let y2 = Tensor::new(vec![1, y.len()], y.data().to_vec())?;
            let d2 = Tensor::new(vec![1, y.len()], grad_out.data().to_vec())?;
            Ok(Tensor::vector(softmax_rows_backward(&y2, &d2).into_data()))
        }
        (2, 1) => Ok(softmax_rows_backward(y, grad_out)),
        (2, 0) => Ok(softmax_rows_backward(&y.transpose(), &grad_out.transpose()).transpose()),
        _ => Err(Error::Shape {
            op: "softmax_backward",
            detail: format!("axis {axis} of shape {:?}", y.shape()),
        }),
    }
}

pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut out = y.zeros_like();
    let c = y.cols().max(1);
    for ((o, yr), dr) in out
        .data_mut()
        .chunks_mut(c)
        .zip(y.data().chunks(c))
        .zip(grad_out.data().chunks(c))
    {
        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for ((o, a), d) in o.iter_mut().zip(yr).zip(dr) {
            *o = a * (d - dot);
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        let u = GELU_C * (*v + GELU_K * *v * *v * *v);
        *v = 0.5 * *v * (1.0 + u.tanh());
    }
    out
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut out = x.zeros_like();
    for ((o, &v), &d) in out.data_mut().iter_mut().zip(x.data()).zip(grad_out.data()) {
        let u = GELU_C * (v + GELU_K * v * v * v);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
        *o = d * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
    out
}

/// Inverted dropout with a precomputed keep mask: kept entries are scaled by
/// `1 / (1 − rate)`.
pub fn apply_dropout_mask(x: &Tensor, mask: &[bool], rate: f64) -> Tensor {
    let scale = 1.0 / (1.0 - rate);
    let mut out = x.clone();
    for (v, &keep) in out.data_mut().iter_mut().zip(mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
    out
}
