//! Datasets and model shapes shared by the integration tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use ctxsent::data::{LabelSchema, PairExample};
use ctxsent::model::{EncoderClassifier, ModelConfig};
use ctxsent::tokenizer::{train_vocab, Vocab};
use ctxsent::training::TrainConfig;

use super::rng;

/// Class counts of the reference corpus: Negatif, Netral, Positif.
pub const REFERENCE_COUNTS: [usize; 3] = [10_357, 17_315, 3_688];

/// A three-class dataset with exactly `counts[c]` examples of class `c`,
/// interleaved so that no class is contiguous.
pub fn dataset_with_counts(counts: &[usize]) -> Vec<PairExample> {
    let mut left = counts.to_vec();
    let mut out = Vec::with_capacity(counts.iter().sum());
    while left.iter().any(|&n| n > 0) {
        for (c, n) in left.iter_mut().enumerate() {
            if *n > 0 {
                *n -= 1;
                let i = out.len();
                out.push(PairExample::new(
                    format!("p{i:06}"),
                    format!("topik {}", i % 7),
                    format!("teks {i}"),
                    c,
                ));
            }
        }
    }
    out
}

/// Binary dataset whose label is decided by one of two cue tokens in the text.
pub fn separable_dataset(n: usize, seed: u64) -> Vec<PairExample> {
    let mut r = rng(seed);
    let fillers = [
        "hari", "ini", "kata", "warga", "kota", "itu", "sangat", "cukup",
    ];
    let contexts = ["Layanan publik", "Transportasi kota", "Harga pangan"];
    (0..n)
        .map(|i| {
            let label = i % 2;
            let cue = ["buruk", "bagus"][label];
            let mut words: Vec<&str> = (0..r.random_range(2..5))
                .map(|_| *fillers.choose(&mut r).unwrap())
                .collect();
            let at = r.random_range(0..=words.len());
            words.insert(at, cue);
            PairExample::new(
                format!("s{i:05}"),
                *contexts.choose(&mut r).unwrap(),
                words.join(" "),
                label,
            )
        })
        .collect()
}

pub fn vocab_for(dataset: &[PairExample]) -> Vocab {
    train_vocab(
        dataset
            .iter()
            .flat_map(|e| [e.context.as_str(), e.text.as_str()]),
        500,
    )
    .unwrap()
}

pub fn small_model(vocab: &Vocab, schema: &LabelSchema, seed: u64) -> EncoderClassifier {
    EncoderClassifier::new(ModelConfig {
        vocab_size: vocab.len(),
        max_len: 16,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        n_classes: schema.len(),
        dropout: 0.1,
        init_seed: seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

pub fn fast_train_config(seed: u64, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        max_epochs,
        patience: 2,
        seed,
        ..TrainConfig::default()
    }
}
