//! Central finite-difference oracle and per-primitive gradient probes.
//!
//! Each probe returns the worst relative error between the analytic gradient
//! and the numeric one over every input coordinate, for one random draw.
//! Tensor-valued ops are reduced to a scalar with a random projection
//! `L = Σ r ⊙ y`, so the analytic side is the op's backward applied to `r`.

use ctxsent::model::{EncoderClassifier, ModelConfig};
use ctxsent::nn::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, matmul,
    matmul_backward, multi_head_attention, multi_head_attention_backward, softmax,
    softmax_backward, weighted_cross_entropy, AttentionParams, LinearParams, Tensor,
};
use ctxsent::tokenizer::{encode_ids, Encoding};
use rand::Rng;

use super::{random_tensor, rng};

pub const STEP: f64 = 1e-5;
/// Denominator floor for relative error, so coordinates whose true gradient
/// is zero are judged on absolute error at this scale.
pub const FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Central differences of `f` at `x` for every coordinate.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

pub fn matmul_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let a = random_tensor(&mut g, &[3, 4], 1.0);
    let b = random_tensor(&mut g, &[4, 2], 1.0);
    let r = random_tensor(&mut g, &[3, 2], 1.0);
    let (da, db) = matmul_backward(&a, &b, &r).unwrap();
    let na = numeric_grad(a.data(), |x| {
        project(&matmul(&with_data(&a, x), &b).unwrap(), &r)
    });
    let nb = numeric_grad(b.data(), |x| {
        project(&matmul(&a, &with_data(&b, x)).unwrap(), &r)
    });
    max_rel_error(da.data(), &na).max(max_rel_error(db.data(), &nb))
}

pub fn linear_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[3, 4], 1.0);
    let w = random_tensor(&mut g, &[4, 5], 1.0);
    let b = random_tensor(&mut g, &[5], 1.0);
    let r = random_tensor(&mut g, &[3, 5], 1.0);
    let grads = linear_backward(&x, &w, &r).unwrap();
    let nx = numeric_grad(x.data(), |v| {
        project(&linear(&with_data(&x, v), &w, &b).unwrap(), &r)
    });
    let nw = numeric_grad(w.data(), |v| {
        project(&linear(&x, &with_data(&w, v), &b).unwrap(), &r)
    });
    let nb = numeric_grad(b.data(), |v| {
        project(&linear(&x, &w, &with_data(&b, v)).unwrap(), &r)
    });
    max_rel_error(grads.input.data(), &nx)
        .max(max_rel_error(grads.weight.data(), &nw))
        .max(max_rel_error(grads.bias.data(), &nb))
}

pub fn layer_norm_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[4, 8], 2.0);
    let gain = random_tensor(&mut g, &[8], 1.5);
    let bias = random_tensor(&mut g, &[8], 1.0);
    let r = random_tensor(&mut g, &[4, 8], 1.0);
    let eps = 1e-5;
    let (_, cache) = layer_norm(&x, &gain, &bias, eps).unwrap();
    let grads = layer_norm_backward(&r, &gain, &cache).unwrap();
    let f = |x: &Tensor, gain: &Tensor, bias: &Tensor| {
        project(&layer_norm(x, gain, bias, eps).unwrap().0, &r)
    };
    let nx = numeric_grad(x.data(), |v| f(&with_data(&x, v), &gain, &bias));
    let ng = numeric_grad(gain.data(), |v| f(&x, &with_data(&gain, v), &bias));
    let nb = numeric_grad(bias.data(), |v| f(&x, &gain, &with_data(&bias, v)));
    max_rel_error(grads.input.data(), &nx)
        .max(max_rel_error(grads.gain.data(), &ng))
        .max(max_rel_error(grads.bias.data(), &nb))
}

pub fn softmax_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[7], 3.0);
    let r = random_tensor(&mut g, &[7], 1.0);
    let y = softmax(&x, 0).unwrap();
    let dx = softmax_backward(&y, &r, 0).unwrap();
    let nx = numeric_grad(x.data(), |v| {
        project(&softmax(&with_data(&x, v), 0).unwrap(), &r)
    });
    let mut worst = max_rel_error(dx.data(), &nx);
    // Both axes of a matrix as well.
    let m = random_tensor(&mut g, &[3, 4], 3.0);
    let rm = random_tensor(&mut g, &[3, 4], 1.0);
    for axis in 0..2 {
        let y = softmax(&m, axis).unwrap();
        let dm = softmax_backward(&y, &rm, axis).unwrap();
        let nm = numeric_grad(m.data(), |v| {
            project(&softmax(&with_data(&m, v), axis).unwrap(), &rm)
        });
        worst = worst.max(max_rel_error(dm.data(), &nm));
    }
    worst
}

pub fn gelu_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[3, 5], 4.0);
    let r = random_tensor(&mut g, &[3, 5], 1.0);
    let dx = gelu_backward(&x, &r);
    let nx = numeric_grad(x.data(), |v| project(&gelu(&with_data(&x, v)), &r));
    max_rel_error(dx.data(), &nx)
}

fn random_linear(g: &mut rand_chacha::ChaCha8Rng, d: usize) -> LinearParams {
    LinearParams {
        weight: random_tensor(g, &[d, d], 0.8),
        bias: random_tensor(g, &[d], 0.3),
    }
}

fn slot(p: &mut AttentionParams, i: usize) -> &mut Tensor {
    match i {
        0 => &mut p.query.weight,
        1 => &mut p.query.bias,
        2 => &mut p.key.weight,
        3 => &mut p.key.bias,
        4 => &mut p.value.weight,
        5 => &mut p.value.bias,
        6 => &mut p.output.weight,
        _ => &mut p.output.bias,
    }
}

/// Cross-attention of `tq` queries over `tk` keys, optionally with the last
/// key masked; checks inputs and every projection.
pub fn attention_error(seed: u64, n_heads: usize, tq: usize, tk: usize, mask_last: bool) -> f64 {
    let mut g = rng(seed);
    let d = 4;
    let q_in = random_tensor(&mut g, &[tq, d], 1.0);
    let kv_in = random_tensor(&mut g, &[tk, d], 1.0);
    let params = AttentionParams {
        query: random_linear(&mut g, d),
        key: random_linear(&mut g, d),
        value: random_linear(&mut g, d),
        output: random_linear(&mut g, d),
    };
    let mut mask = vec![1u8; tk];
    if mask_last {
        mask[tk - 1] = 0;
    }
    let r = random_tensor(&mut g, &[tq, d], 1.0);
    let (_, cache) = multi_head_attention(&q_in, &kv_in, &mask, &params, n_heads).unwrap();
    let grads = multi_head_attention_backward(&r, &params, &cache).unwrap();
    let eval = |q: &Tensor, kv: &Tensor, p: &AttentionParams| {
        project(
            &multi_head_attention(q, kv, &mask, p, n_heads).unwrap().0,
            &r,
        )
    };
    let mut worst = max_rel_error(
        grads.q_in.data(),
        &numeric_grad(q_in.data(), |v| eval(&with_data(&q_in, v), &kv_in, &params)),
    );
    worst = worst.max(max_rel_error(
        grads.kv_in.data(),
        &numeric_grad(kv_in.data(), |v| {
            eval(&q_in, &with_data(&kv_in, v), &params)
        }),
    ));
    let mut analytic = grads.params;
    for i in 0..8 {
        let base = slot(&mut params.clone(), i).clone();
        let numeric = numeric_grad(base.data(), |v| {
            let mut p = params.clone();
            *slot(&mut p, i) = with_data(&base, v);
            eval(&q_in, &kv_in, &p)
        });
        worst = worst.max(max_rel_error(slot(&mut analytic, i).data(), &numeric));
    }
    worst
}

pub fn cross_entropy_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let logits = random_tensor(&mut g, &[4, 3], 2.0);
    let labels: Vec<usize> = (0..4).map(|_| g.random_range(0..3)).collect();
    let weights = [1.009, 0.604, 2.834];
    let (_, d) = weighted_cross_entropy(&logits, &labels, &weights).unwrap();
    let n = numeric_grad(logits.data(), |v| {
        weighted_cross_entropy(&with_data(&logits, v), &labels, &weights)
            .unwrap()
            .0
    });
    max_rel_error(d.data(), &n)
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        max_len: 10,
        d_model: 4,
        n_heads: 2,
        n_layers: 2,
        d_ff: 6,
        n_classes: 3,
        dropout: 0.2,
        layer_norm_eps: 1e-12,
        init_seed: seed,
    }
}

pub fn random_batch(g: &mut rand_chacha::ChaCha8Rng, cfg: &ModelConfig, b: usize) -> Vec<Encoding> {
    (0..b)
        .map(|_| {
            let c: Vec<u32> = (0..g.random_range(1..3))
                .map(|_| g.random_range(4..cfg.vocab_size as u32))
                .collect();
            let t: Vec<u32> = (0..g.random_range(1..4))
                .map(|_| g.random_range(1..cfg.vocab_size as u32))
                .collect();
            encode_ids(&c, &t, cfg.max_len).unwrap()
        })
        .collect()
}

/// Replaces the small init draw with O(1) weights so every path carries
/// gradient signal well above finite-difference noise.
pub fn randomize(model: &mut EncoderClassifier, g: &mut rand_chacha::ChaCha8Rng) {
    let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(model.weights.tensors_mut()) {
        let gain = name.ends_with(".gain");
        for v in t.data_mut() {
            *v = if gain {
                1.0 + g.random_range(-0.3..0.3)
            } else {
                g.random_range(-0.5..0.5)
            };
        }
    }
}

/// Full model loss (weighted cross-entropy over a small batch, with fixed
/// dropout masks) against every trainable coordinate.
pub fn model_error(seed: u64) -> f64 {
    let mut g = rng(seed ^ 0x5eed);
    let mut model = EncoderClassifier::new(tiny_config(seed)).unwrap();
    randomize(&mut model, &mut g);
    let batch = random_batch(&mut g, &model.config, 3);
    let labels: Vec<usize> = (0..3).map(|_| g.random_range(0..3)).collect();
    let weights = [1.009, 0.604, 2.834];
    let dropout = Some((seed, 1));
    let (_, grads) = model
        .loss_and_gradients(&batch, &labels, &weights, dropout)
        .unwrap();
    let analytic: Vec<Vec<f64>> = grads
        .named()
        .iter()
        .map(|(_, t)| t.data().to_vec())
        .collect();
    let mut worst: f64 = 0.0;
    let n_tensors = analytic.len();
    for k in 0..n_tensors {
        let base = model.weights.named()[k].1.clone();
        let numeric = numeric_grad(base.data(), |v| {
            let mut m = model.clone();
            *m.weights.tensors_mut()[k] = with_data(&base, v);
            m.loss_and_gradients(&batch, &labels, &weights, dropout)
                .unwrap()
                .0
        });
        worst = worst.max(max_rel_error(&analytic[k], &numeric));
    }
    worst
}
