use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adapters::{AdapterMode, ClassifierAdapter};
use super::synthetic::complete_flip_groups;
use crate::data::{LabelSchema, PairExample};
use crate::error::{Error, Result};
use crate::metrics::{confusion, evaluate, render_report, EvalReport, ReportFormat};
use crate::pool::map_bounded;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct CacheKey {
    adapter: String,
    pair_id: String,
    content: String,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    adapter: String,
    pair_id: String,
    content: String,
    label: usize,
}

/// Predictions keyed by (adapter fingerprint, pair id, content hash).
/// Editing a pair's context or text invalidates its entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionCache {
    entries: BTreeMap<CacheKey, usize>,
}

fn content_hash(e: &PairExample) -> String {
    let d = Sha256::new()
        .chain_update(e.context.as_bytes())
        .chain_update([0u8])
        .chain_update(e.text.as_bytes())
        .finalize();
    hex::encode(&d[..8])
}

impl PredictionCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn key(adapter: &dyn ClassifierAdapter, e: &PairExample) -> CacheKey {
        CacheKey {
            adapter: adapter.fingerprint(),
            pair_id: e.id.clone(),
            content: content_hash(e),
        }
    }

    /// Missing file means an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = PredictionCache::default();
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(Error::io(path, e)),
        };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CacheLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: n + 1,
                message: format!("prediction cache: {e}"),
            })?;
            cache.entries.insert(
                CacheKey {
                    adapter: l.adapter,
                    pair_id: l.pair_id,
                    content: l.content,
                },
                l.label,
            );
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (k, &label) in &self.entries {
            let line = serde_json::to_string(&CacheLine {
                adapter: k.adapter.clone(),
                pair_id: k.pair_id.clone(),
                content: k.content.clone(),
                label,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub dataset_name: String,
    /// Concurrent requests for remote adapters.
    pub max_in_flight: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            dataset_name: "dataset".into(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdapterEvaluation {
    pub adapter: String,
    pub mode: AdapterMode,
    pub pair_ids: Vec<String>,
    pub predictions: Vec<Option<usize>>,
    pub failures: Vec<(String, String)>,
    /// Calls made to the adapter (cache hits excluded).
    pub calls: usize,
    pub report: EvalReport,
}

/// Predicts every pair, then scores the covered ones. Failed pairs are
/// recorded and lower the report's coverage; they do not abort the run.
pub fn evaluate_adapter(
    adapter: &dyn ClassifierAdapter,
    dataset: &[PairExample],
    schema: &LabelSchema,
    opts: &EvalOptions,
    cache: Option<&mut PredictionCache>,
) -> Result<AdapterEvaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cached: Vec<Option<usize>> = match &cache {
        Some(c) => dataset
            .iter()
            .map(|e| c.entries.get(&PredictionCache::key(adapter, e)).copied())
            .collect(),
        None => vec![None; dataset.len()],
    };
    let todo: Vec<usize> = (0..dataset.len())
        .filter(|&i| cached[i].is_none())
        .collect();
    let workers = if adapter.is_remote() {
        opts.max_in_flight
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    };
    let calls = Mutex::new(0usize);
    let fresh = map_bounded(&todo, workers, |_, &i| {
        *calls.lock().unwrap() += 1;
        let e = &dataset[i];
        adapter.predict(&e.context, &e.text).and_then(|label| {
            if label < schema.len() {
                Ok(label)
            } else {
                Err(Error::Adapter {
                    adapter: adapter.name().to_string(),
                    message: format!("label index {label} outside schema `{}`", schema.name),
                })
            }
        })
    });

    let mut predictions = cached;
    let mut failures = Vec::new();
    let mut cache = cache;
    for (&i, result) in todo.iter().zip(fresh) {
        match result {
            Ok(label) => {
                predictions[i] = Some(label);
                if let Some(c) = cache.as_deref_mut() {
                    c.entries
                        .insert(PredictionCache::key(adapter, &dataset[i]), label);
                }
            }
            Err(e) => failures.push((dataset[i].id.clone(), e.to_string())),
        }
    }

    let (golds, preds): (Vec<usize>, Vec<usize>) = dataset
        .iter()
        .zip(&predictions)
        .filter_map(|(e, p)| p.map(|p| (e.label, p)))
        .unzip();
    if golds.is_empty() {
        return Err(Error::Adapter {
            adapter: adapter.name().to_string(),
            message: format!("no pair could be predicted; first error: {}", failures[0].1),
        });
    }
    let mut report = evaluate(
        &confusion(&golds, &preds, &schema.classes)?,
        adapter.name(),
        &opts.dataset_name,
    )?;
    report.coverage = golds.len() as f64 / dataset.len() as f64;
    if !failures.is_empty() {
        report.notes.push(format!(
            "coverage {:.1}%: {} of {} pairs failed",
            report.coverage * 100.0,
            failures.len(),
            dataset.len()
        ));
    }
    Ok(AdapterEvaluation {
        adapter: adapter.name().to_string(),
        mode: adapter.mode(),
        pair_ids: dataset.iter().map(|e| e.id.clone()).collect(),
        predictions,
        failures,
        calls: calls.into_inner().unwrap(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipRow {
    pub adapter: String,
    pub flip_accuracy: Option<f64>,
    pub flip_n: usize,
}

/// Accuracy on members of flip groups that are complete in `dataset`.
/// Failed predictions count as wrong.
pub fn flip_accuracy(eval: &AdapterEvaluation, dataset: &[PairExample]) -> FlipRow {
    let members: Vec<usize> = complete_flip_groups(dataset)
        .into_iter()
        .flatten()
        .collect();
    let correct = members
        .iter()
        .filter(|&&i| eval.predictions[i] == Some(dataset[i].label))
        .count();
    FlipRow {
        adapter: eval.adapter.clone(),
        flip_accuracy: (!members.is_empty()).then(|| correct as f64 / members.len() as f64),
        flip_n: members.len(),
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub evaluations: Vec<AdapterEvaluation>,
    pub flip: Vec<FlipRow>,
}

impl Comparison {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.evaluations.iter().map(|e| e.report.clone()).collect()
    }

    pub fn markdown(&self) -> Result<String> {
        let r = render_report(&self.reports(), ReportFormat::Markdown)?;
        let mut out = String::from("## Overall\n\n");
        out.push_str(&r.overall);
        out.push_str("\n## Per-class F1\n\n");
        out.push_str(&r.per_class);
        out.push_str("\n## Flip subset\n\n| Classifier | Mode | Flip accuracy | Members |\n| :--- | :--- | ---: | ---: |\n");
        for (row, e) in self.flip.iter().zip(&self.evaluations) {
            let acc = row
                .flip_accuracy
                .map(|a| format!("{:.1}%", a * 100.0))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "| {} | {} | {acc} | {} |",
                row.adapter,
                e.mode.as_str(),
                row.flip_n
            );
        }
        let notes: Vec<String> = self
            .evaluations
            .iter()
            .flat_map(|e| {
                e.report
                    .notes
                    .iter()
                    .map(move |n| format!("- {}: {n}", e.adapter))
            })
            .collect();
        if !notes.is_empty() {
            out.push_str("\n## Notes\n\n");
            out.push_str(&notes.join("\n"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn flip_csv(&self) -> String {
        let mut out = String::from("adapter,flip_accuracy,flip_n\n");
        for r in &self.flip {
            let acc = r
                .flip_accuracy
                .map(|a| format!("{a:.3}"))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{acc},{}", r.adapter, r.flip_n);
        }
        out
    }

    /// Writes `comparison.md`, `overall.csv`, `per_class.csv` and `flip.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = render_report(&self.reports(), ReportFormat::Csv)?;
        for (name, body) in [
            ("comparison.md", self.markdown()?),
            ("overall.csv", csv.overall),
            ("per_class.csv", csv.per_class),
            ("flip.csv", self.flip_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Combines evaluations that must share one test set.
pub fn build_comparison(
    evaluations: Vec<AdapterEvaluation>,
    dataset: &[PairExample],
) -> Result<Comparison> {
    if evaluations.len() < 2 {
        return Err(Error::Comparison(
            "a comparison needs at least two adapters".into(),
        ));
    }
    let expected: BTreeSet<&str> = dataset.iter().map(|e| e.id.as_str()).collect();
    for e in &evaluations {
        let got: BTreeSet<&str> = e.pair_ids.iter().map(String::as_str).collect();
        if got != expected {
            let missing = expected.difference(&got).count();
            let extra = got.difference(&expected).count();
            return Err(Error::Comparison(format!(
                "adapter `{}` was evaluated on a different test set ({missing} pairs missing, {extra} extra)",
                e.adapter
            )));
        }
    }
    let flip = evaluations
        .iter()
        .map(|e| flip_accuracy(e, dataset))
        .collect();
    Ok(Comparison { evaluations, flip })
}

/// Evaluates every adapter on the same dataset and assembles the comparison.
pub fn compare(
    adapters: &[&dyn ClassifierAdapter],
    dataset: &[PairExample],
    schema: &LabelSchema,
    opts: &EvalOptions,
    mut cache: Option<&mut PredictionCache>,
) -> Result<Comparison> {
    if adapters.len() < 2 {
        return Err(Error::Comparison(
            "a comparison needs at least two adapters".into(),
        ));
    }
    let evaluations = adapters
        .iter()
        .map(|a| evaluate_adapter(*a, dataset, schema, opts, cache.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    build_comparison(evaluations, dataset)
}
