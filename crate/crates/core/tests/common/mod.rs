#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;
pub mod http;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxsent::nn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random ids with a non-empty context and text, padded to `max_len`.
pub fn random_encoding(
    rng: &mut ChaCha8Rng,
    vocab_size: usize,
    max_len: usize,
) -> ctxsent::tokenizer::Encoding {
    let ctx_len = rng.random_range(1..=(max_len - 4) / 2);
    let txt_len = rng.random_range(1..=max_len - 3 - ctx_len);
    let mut ids = |n: usize| -> Vec<u32> {
        (0..n)
            .map(|_| rng.random_range(4..vocab_size as u32))
            .collect()
    };
    let ctx = ids(ctx_len);
    let txt = ids(txt_len);
    ctxsent::tokenizer::encode_ids(&ctx, &txt, max_len).unwrap()
}
