use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::example::{PairExample, Relevancy, SourceKind};
use super::schema::LabelSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub class: String,
    pub count: usize,
    /// Rounded half-up to one decimal.
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossTabRow {
    pub relevancy: Relevancy,
    pub total: usize,
    pub per_class: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub schema: String,
    pub total: usize,
    pub per_class: Vec<ClassCount>,
    pub per_source: Vec<(Option<SourceKind>, usize)>,
    /// Present iff at least one example carries a relevancy value.
    pub cross_tab: Option<Vec<CrossTabRow>>,
}

impl DatasetStats {
    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(|c| c.count).collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_class
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max("Sentiment".len())
            .max("Total".len());
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>10}",
            "Sentiment", "Count", "Percentage"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>9.1}%",
                c.class,
                group_thousands(c.count),
                c.percentage
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>9}%",
            "Total",
            group_thousands(self.total),
            "100"
        );
        if !self.per_source.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Source kinds:");
            for (kind, n) in &self.per_source {
                let name = kind.map(SourceKind::as_str).unwrap_or("unspecified");
                let _ = writeln!(out, "  {name:<12} {n}");
            }
        }
        if let Some(rows) = &self.cross_tab {
            let _ = writeln!(out);
            let _ = writeln!(out, "Sentiment by relevancy (row percentages):");
            for row in rows {
                let cells: Vec<String> = row
                    .per_class
                    .iter()
                    .map(|c| format!("{} {} ({:.1}%)", c.class, c.count, c.percentage))
                    .collect();
                let _ = writeln!(
                    out,
                    "  {:<13} n={:<7} {}",
                    row.relevancy.as_str(),
                    row.total,
                    cells.join(", ")
                );
            }
        }
        out
    }

    /// `class,count,percentage`, one row per class.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("class,count,percentage\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{:.1}", c.class, c.count, c.percentage);
        }
        out
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// `100 · count / total` rounded half-up to one decimal, using integer arithmetic.
pub fn percentage_one_decimal(count: usize, total: usize) -> f64 {
    assert!(total > 0);
    let (count, total) = (count as u128, total as u128);
    let tenths = (2000 * count + total) / (2 * total);
    tenths as f64 / 10.0
}

fn class_counts(schema: &LabelSchema, counts: &[usize]) -> Vec<ClassCount> {
    let total: usize = counts.iter().sum();
    schema
        .classes
        .iter()
        .zip(counts)
        .map(|(class, &count)| ClassCount {
            class: class.clone(),
            count,
            percentage: if total == 0 {
                0.0
            } else {
                percentage_one_decimal(count, total)
            },
        })
        .collect()
}

pub fn compute_stats(dataset: &[PairExample], schema: &LabelSchema) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = vec![0usize; schema.len()];
    let mut sources: BTreeMap<Option<SourceKind>, usize> = BTreeMap::new();
    let mut cross: BTreeMap<Relevancy, Vec<usize>> = BTreeMap::new();
    for example in dataset {
        example.validate(schema)?;
        counts[example.label] += 1;
        *sources.entry(example.source_kind).or_default() += 1;
        if let Some(r) = example.relevancy {
            cross.entry(r).or_insert_with(|| vec![0; schema.len()])[example.label] += 1;
        }
    }
    let cross_tab = (!cross.is_empty()).then(|| {
        cross
            .into_iter()
            .map(|(relevancy, row)| CrossTabRow {
                relevancy,
                total: row.iter().sum(),
                per_class: class_counts(schema, &row),
            })
            .collect()
    });
    Ok(DatasetStats {
        schema: schema.name.clone(),
        total: dataset.len(),
        per_class: class_counts(schema, &counts),
        per_source: sources.into_iter().collect(),
        cross_tab,
    })
}

/// Builds stats directly from class counts (no per-source or cross-tab data).
pub fn stats_from_counts(counts: &[usize], schema: &LabelSchema) -> Result<DatasetStats> {
    if counts.len() != schema.len() {
        return Err(Error::Schema(format!(
            "{} counts given for {} classes",
            counts.len(),
            schema.len()
        )));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(DatasetStats {
        schema: schema.name.clone(),
        total,
        per_class: class_counts(schema, counts),
        per_source: Vec::new(),
        cross_tab: None,
    })
}

/// Per-class loss weights `N / (K · n_c)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassWeights {
    pub classes: Vec<String>,
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(schema: &LabelSchema) -> Self {
        ClassWeights {
            classes: schema.classes.clone(),
            weights: vec![1.0; schema.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    /// Display form, three decimals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (c, w) in self.classes.iter().zip(&self.weights) {
            let _ = writeln!(out, "{c}: {w:.3}");
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("class,weight\n");
        for (c, w) in self.classes.iter().zip(&self.weights) {
            let _ = writeln!(out, "{c},{w}");
        }
        out
    }
}

pub fn class_weights(stats: &DatasetStats, schema: &LabelSchema) -> Result<ClassWeights> {
    inverse_frequency_weights(&stats.counts(), schema)
}

pub fn inverse_frequency_weights(counts: &[usize], schema: &LabelSchema) -> Result<ClassWeights> {
    if counts.len() != schema.len() {
        return Err(Error::Schema(format!(
            "{} counts given for {} classes",
            counts.len(),
            schema.len()
        )));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroClassCount(schema.classes[i].clone()));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(ClassWeights {
        classes: schema.classes.clone(),
        weights: counts
            .iter()
            .map(|&n| total as f64 / (k * n as f64))
            .collect(),
    })
}
