use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::example::PairExample;
use super::schema::LabelSchema;
use crate::error::{Error, Result};

/// Per-class holdout sizes by largest-remainder allocation of `n_c · fraction`.
///
/// The total is `round(N · fraction)` (half-up). Every class first receives
/// `floor(n_c · fraction)`; the seats left over go to the classes with the
/// largest fractional remainders, lower class index first on ties.
pub fn holdout_allocation(counts: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction + 0.5).floor() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&n| n as f64 * fraction).collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(counts)
        .map(|(&q, &n)| (q.floor() as usize).min(n))
        .collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(assigned);
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    Ok(alloc)
}

/// Stratified split into `(train, holdout)`.
///
/// Within each class, members are shuffled with a ChaCha8 generator seeded
/// from `seed` (class `c` uses stream `c`) and the first `h_c` become holdout.
/// Both sides keep the input order.
pub fn stratified_split(
    dataset: &[PairExample],
    schema: &LabelSchema,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); schema.len()];
    for (i, example) in dataset.iter().enumerate() {
        example.validate(schema)?;
        members[example.label].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    for (c, &n) in counts.iter().enumerate() {
        if n < 2 {
            return Err(Error::Split(format!(
                "class `{}` has {n} example(s); at least 2 are needed",
                schema.classes[c]
            )));
        }
    }
    let alloc = holdout_allocation(&counts, holdout_fraction)?;
    for (c, (&h, &n)) in alloc.iter().zip(&counts).enumerate() {
        if h == 0 || h == n {
            return Err(Error::Split(format!(
                "fraction {holdout_fraction} leaves class `{}` empty on one side ({h} of {n} held out)",
                schema.classes[c]
            )));
        }
    }

    let mut in_holdout = vec![false; dataset.len()];
    for (c, idx) in members.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        idx.shuffle(&mut rng);
        for &i in &idx[..alloc[c]] {
            in_holdout[i] = true;
        }
    }
    let mut train = Vec::with_capacity(dataset.len());
    let mut holdout = Vec::new();
    for (example, held) in dataset.iter().zip(in_holdout) {
        if held {
            holdout.push(example.clone());
        } else {
            train.push(example.clone());
        }
    }
    Ok((train, holdout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Remapped {
    pub examples: Vec<PairExample>,
    pub dropped: usize,
    /// Set when nothing survives the remap.
    pub warning: Option<String>,
}

/// Applies `child`'s remap rule to a dataset labeled under its parent schema.
pub fn remap(dataset: &[PairExample], child: &LabelSchema) -> Result<Remapped> {
    if child.remap.is_none() {
        return Err(Error::Schema(format!("`{}` has no remap rule", child.name)));
    }
    let mut examples = Vec::new();
    let mut dropped = 0;
    for example in dataset {
        match child.map_from_parent(example.label) {
            Some(label) => examples.push(PairExample {
                label,
                ..example.clone()
            }),
            None => dropped += 1,
        }
    }
    let warning = examples.is_empty().then(|| {
        let msg = format!(
            "remapping to `{}` dropped all {dropped} example(s); result is empty",
            child.name
        );
        log::warn!("{msg}");
        msg
    });
    Ok(Remapped {
        examples,
        dropped,
        warning,
    })
}

/// Drops Netral and re-indexes Positif from 2 to 1.
pub fn to_binary(dataset: &[PairExample]) -> Remapped {
    remap(dataset, &LabelSchema::binary()).expect("built-in binary schema has a remap rule")
}
