//! Generated corpora in which the same statement carries different sentiment
//! under different topics.
//!
//! A text is `"{opener} {subject} {cue} {tail}"`. Its gold label depends only
//! on the topic and the cue: positive if the cue is in the topic's positive
//! lexicon, negative if in its negative lexicon, neutral otherwise. Openers,
//! subjects and tails are shared by every topic and carry no signal.
//!
//! Flip pairs emit one fresh text under two topics that assign its cue
//! opposite polarities. A predictor that ignores the context gives both
//! members the same answer, so it is right on exactly one of them.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSchema, PairExample, SourceKind};
use crate::error::{Error, Result};

pub const FLIP_GROUP_KEY: &str = "flip_group";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub id: String,
    pub context: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub topics: Vec<TopicSpec>,
    /// Cues that no topic lexicon claims; always neutral.
    pub neutral_cues: Vec<String>,
    pub openers: Vec<String>,
    pub subjects: Vec<String>,
    pub tails: Vec<String>,
    pub examples_per_topic: usize,
    /// Share of single (non-flip) examples drawn with a neutral cue.
    pub neutral_filler_rate: f64,
    /// Share of all examples that belong to flip pairs.
    pub flip_fraction: f64,
    pub seed: u64,
}

fn words(s: &[&str]) -> Vec<String> {
    s.iter().map(|w| w.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let up = ["naik", "meningkat", "melonjak", "bertambah"];
        let down = ["turun", "menurun", "anjlok", "berkurang"];
        let enforce = ["ditangkap", "disita", "digagalkan", "dibongkar"];
        let topic = |id: &str, context: &str, pos: &[&[&str]], neg: &[&[&str]]| TopicSpec {
            id: id.into(),
            context: context.into(),
            positive: pos.iter().flat_map(|f| words(f)).collect(),
            negative: neg.iter().flat_map(|f| words(f)).collect(),
        };
        SyntheticSpec {
            topics: vec![
                topic("t1", "Pertumbuhan ekonomi nasional", &[&up], &[&down]),
                topic("t2", "Inflasi dan daya beli masyarakat", &[&down], &[&up]),
                topic("t3", "Pemberantasan korupsi", &[&enforce], &[]),
                topic("t4", "Peredaran narkoba", &[&down, &enforce], &[&up]),
                topic("t5", "Kinerja ekspor", &[&up], &[&down, &enforce]),
                topic("t6", "Kebebasan pers", &[], &[&enforce]),
            ],
            neutral_cues: words(&["dibahas", "dicatat", "dilaporkan", "diumumkan"]),
            openers: words(&[
                "Menurut laporan terbaru,",
                "Data bulan ini menunjukkan",
                "Pengamat menyebut",
                "Sepanjang tahun ini",
                "Dalam sepekan terakhir",
                "Pemerintah menyatakan",
                "Warganet ramai membahas bahwa",
                "Hasil survei menunjukkan",
                "Pekan lalu",
                "Secara mengejutkan",
            ]),
            subjects: words(&[
                "angkanya",
                "jumlahnya",
                "kasusnya",
                "nilainya",
                "volumenya",
                "pelakunya",
                "indeksnya",
                "totalnya",
            ]),
            tails: words(&[
                "setiap bulan",
                "sejak awal tahun",
                "di berbagai daerah",
                "dibandingkan tahun lalu",
                "secara signifikan",
                "dalam waktu singkat",
                "menurut data resmi",
                "di kota besar",
                "pada kuartal ini",
                "tanpa henti",
            ]),
            examples_per_topic: 500,
            neutral_filler_rate: 0.1,
            flip_fraction: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Every cue in any lexicon, in first-seen order, then the neutral cues.
    pub fn cue_pool(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut pool = Vec::new();
        for t in &self.topics {
            for c in t
                .positive
                .iter()
                .chain(&t.negative)
                .chain(&self.neutral_cues)
            {
                if seen.insert(c.clone()) {
                    pool.push(c.clone());
                }
            }
        }
        pool
    }

    /// Gold label index (three-class) of `cue` under topic `t`.
    pub fn label(&self, t: usize, cue: &str) -> usize {
        let topic = &self.topics[t];
        if topic.positive.iter().any(|c| c == cue) {
            2
        } else if topic.negative.iter().any(|c| c == cue) {
            0
        } else {
            1
        }
    }

    pub fn total(&self) -> usize {
        self.topics.len() * self.examples_per_topic
    }

    fn flip_candidates(&self) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        for cue in self.cue_pool() {
            for a in 0..self.topics.len() {
                for b in a + 1..self.topics.len() {
                    let (la, lb) = (self.label(a, &cue), self.label(b, &cue));
                    if la != 1 && lb != 1 && la != lb {
                        out.push((a, b, cue.clone()));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.topics.len() < 2 {
            return fail("at least two topics are required".into());
        }
        let mut ids = HashSet::new();
        for t in &self.topics {
            if !ids.insert(&t.id) {
                return fail(format!("duplicate topic id `{}`", t.id));
            }
            if t.context.trim().is_empty() {
                return fail(format!("topic `{}` has an empty context", t.id));
            }
            if let Some(c) = t.positive.iter().find(|c| t.negative.contains(c)) {
                return fail(format!(
                    "cue `{c}` is both positive and negative in topic `{}`",
                    t.id
                ));
            }
            if let Some(c) = t
                .positive
                .iter()
                .chain(&t.negative)
                .find(|c| self.neutral_cues.contains(c))
            {
                return fail(format!(
                    "cue `{c}` is listed as neutral and used by topic `{}`",
                    t.id
                ));
            }
        }
        for (name, list) in [
            ("openers", &self.openers),
            ("subjects", &self.subjects),
            ("tails", &self.tails),
        ] {
            if list.is_empty() || list.iter().any(|w| w.trim().is_empty()) {
                return fail(format!("{name} must be non-empty"));
            }
        }
        if self.cue_pool().is_empty() {
            return fail("no cues".into());
        }
        if self.examples_per_topic == 0 {
            return fail("examples_per_topic must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return fail(format!(
                "flip_fraction {} outside [0, 1]",
                self.flip_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.neutral_filler_rate) {
            return fail(format!(
                "neutral_filler_rate {} outside [0, 1]",
                self.neutral_filler_rate
            ));
        }
        if self.neutral_filler_rate > 0.0 && self.neutral_cues.is_empty() {
            return fail("neutral_filler_rate > 0 needs neutral_cues".into());
        }
        if self.flip_pairs() > 0 && self.flip_candidates().is_empty() {
            return fail(
                "no cue has opposite polarities in two topics, so no flip pairs exist".into(),
            );
        }
        Ok(())
    }

    pub fn flip_pairs(&self) -> usize {
        (self.total() as f64 * self.flip_fraction / 2.0).floor() as usize
    }
}

struct Texts<'a> {
    spec: &'a SyntheticSpec,
    /// text → owning topic for singles; flip texts map to `None`.
    owner: HashMap<String, Option<usize>>,
}

impl Texts<'_> {
    fn compose(&self, rng: &mut ChaCha8Rng, cue: &str) -> String {
        let s = self.spec;
        format!(
            "{} {} {} {}",
            s.openers.choose(rng).unwrap(),
            s.subjects.choose(rng).unwrap(),
            cue,
            s.tails.choose(rng).unwrap()
        )
    }

    /// A text not used anywhere else.
    fn fresh(&mut self, rng: &mut ChaCha8Rng, cue: &str) -> Result<String> {
        for _ in 0..10_000 {
            let t = self.compose(rng, cue);
            if !self.owner.contains_key(&t) {
                self.owner.insert(t.clone(), None);
                return Ok(t);
            }
        }
        Err(Error::Config(format!(
            "synthetic spec: ran out of distinct texts for cue `{cue}`; add openers, subjects or tails"
        )))
    }

    /// A text that is either new or already owned by `topic` as a single.
    fn single(&mut self, rng: &mut ChaCha8Rng, cue: &str, topic: usize) -> Result<String> {
        for _ in 0..10_000 {
            let t = self.compose(rng, cue);
            match self.owner.get(&t) {
                None => {
                    self.owner.insert(t.clone(), Some(topic));
                    return Ok(t);
                }
                Some(Some(owner)) if *owner == topic => return Ok(t),
                _ => {}
            }
        }
        Err(Error::Config(format!(
            "synthetic spec: ran out of texts for cue `{cue}`; add openers, subjects or tails"
        )))
    }
}

/// Builds the corpus described by `spec`. Output order is a seeded shuffle;
/// ids are `syn-000001`, ... in that order. Flip-pair members carry
/// `extra["flip_group"]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PairExample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut texts = Texts {
        spec,
        owner: HashMap::new(),
    };
    // (topic, text, label, flip group)
    let mut rows: Vec<(usize, String, usize, Option<usize>)> = Vec::with_capacity(spec.total());
    let mut used = vec![0usize; spec.topics.len()];

    let mut candidates = spec.flip_candidates();
    candidates.shuffle(&mut rng);
    for g in 0..spec.flip_pairs() {
        let (a, b, cue) = &candidates[g % candidates.len()];
        let text = texts.fresh(&mut rng, cue)?;
        for &t in [a, b].iter() {
            rows.push((*t, text.clone(), spec.label(*t, cue), Some(g)));
            used[*t] += 1;
        }
    }

    let singles = spec.total() - rows.len();
    let mut quota: Vec<usize> = used
        .iter()
        .map(|&u| spec.examples_per_topic.saturating_sub(u))
        .collect();
    let mut excess = quota.iter().sum::<usize>() - singles;
    while excess > 0 {
        let (i, _) = quota
            .iter()
            .enumerate()
            .max_by_key(|&(i, &q)| (q, std::cmp::Reverse(i)))
            .unwrap();
        quota[i] -= 1;
        excess -= 1;
    }
    let lexicon_cues: Vec<String> = {
        let neutral: HashSet<&String> = spec.neutral_cues.iter().collect();
        spec.cue_pool()
            .into_iter()
            .filter(|c| !neutral.contains(c))
            .collect()
    };
    for (t, &q) in quota.iter().enumerate() {
        for _ in 0..q {
            let filler = lexicon_cues.is_empty() || rng.random_bool(spec.neutral_filler_rate);
            let cue = if filler {
                spec.neutral_cues.choose(&mut rng).unwrap()
            } else {
                lexicon_cues.choose(&mut rng).unwrap()
            };
            let text = texts.single(&mut rng, cue, t)?;
            rows.push((t, text, spec.label(t, cue), None));
        }
    }

    rows.shuffle(&mut rng);
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (t, text, label, group))| {
            let topic = &spec.topics[t];
            let mut e = PairExample::new(
                format!("syn-{:06}", i + 1),
                topic.context.clone(),
                text,
                label,
            );
            e.topic_id = Some(topic.id.clone());
            e.source_kind = Some(SourceKind::Synthetic);
            if let Some(g) = group {
                e.extra
                    .insert(FLIP_GROUP_KEY.into(), format!("fp-{:05}", g + 1).into());
            }
            e
        })
        .collect())
}

/// Indices of examples whose flip group is fully present in `dataset`
/// (at least two members), grouped by flip group in sorted order.
pub fn complete_flip_groups(dataset: &[PairExample]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.iter().enumerate() {
        if let Some(g) = e.extra.get(FLIP_GROUP_KEY).and_then(|v| v.as_str()) {
            groups.entry(g.to_string()).or_default().push(i);
        }
    }
    groups.into_values().filter(|m| m.len() >= 2).collect()
}

/// Best accuracy any context-free predictor can reach on the complete flip
/// groups: per distinct text, the share of its majority label.
pub fn context_free_ceiling(dataset: &[PairExample]) -> Option<f64> {
    let members: Vec<usize> = complete_flip_groups(dataset)
        .into_iter()
        .flatten()
        .collect();
    if members.is_empty() {
        return None;
    }
    let mut by_text: HashMap<&str, HashMap<usize, usize>> = HashMap::new();
    for &i in &members {
        *by_text
            .entry(&dataset[i].text)
            .or_default()
            .entry(dataset[i].label)
            .or_default() += 1;
    }
    let best: usize = by_text
        .values()
        .map(|c| c.values().copied().max().unwrap())
        .sum();
    Some(best as f64 / members.len() as f64)
}

/// Holdout split that never separates a flip group. Flip groups and single
/// examples are shuffled as units (seeded) and taken into the holdout until it
/// reaches `round(len * fraction)` examples. Both sides keep input order.
pub fn split_keeping_flip_groups(
    dataset: &[PairExample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut units: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.iter().enumerate() {
        let key = match e.extra.get(FLIP_GROUP_KEY).and_then(|v| v.as_str()) {
            Some(g) => format!("g:{g}"),
            None => format!("s:{i:09}"),
        };
        units.entry(key).or_default().push(i);
    }
    let mut units: Vec<Vec<usize>> = units.into_values().collect();
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = (dataset.len() as f64 * fraction).round() as usize;
    let mut in_holdout = vec![false; dataset.len()];
    let mut taken = 0;
    for unit in &units {
        if taken >= target {
            break;
        }
        if taken + unit.len() > target && unit.len() > 1 {
            continue;
        }
        for &i in unit {
            in_holdout[i] = true;
        }
        taken += unit.len();
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (e, h) in dataset.iter().zip(in_holdout) {
        if h {
            holdout.push(e.clone())
        } else {
            train.push(e.clone())
        }
    }
    Ok((train, holdout))
}

pub fn synthetic_schema() -> LabelSchema {
    LabelSchema::three_class()
}
