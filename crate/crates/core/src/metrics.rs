//! Confusion matrices, per-class and aggregate scores, and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `cells[g][p]` counts examples with gold `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.cells[gold][pred]
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    let k = classes.len();
    if golds.len() != preds.len() {
        return Err(Error::Shape {
            op: "confusion",
            detail: format!("{} golds vs {} predictions", golds.len(), preds.len()),
        });
    }
    if golds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cells = vec![vec![0u64; k]; k];
    for (&g, &p) in golds.iter().zip(preds) {
        if g >= k || p >= k {
            return Err(Error::Shape {
                op: "confusion",
                detail: format!("index pair ({g}, {p}) outside {k} classes"),
            });
        }
        cells[g][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any of precision, recall or F1 came from a 0/0 and was reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    pub dataset: String,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Fraction of the dataset that received a prediction.
    pub coverage: f64,
    pub notes: Vec<String>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn evaluate(matrix: &ConfusionMatrix, classifier: &str, dataset: &str) -> Result<EvalReport> {
    let k = matrix.k();
    let total = matrix.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut per_class = Vec::with_capacity(k);
    let mut notes = Vec::new();
    for c in 0..k {
        let tp = matrix.cells[c][c];
        let gold: u64 = matrix.cells[c].iter().sum();
        let pred: u64 = (0..k).map(|g| matrix.cells[g][c]).sum();
        let (precision, p_undef) = ratio(tp, pred);
        let (recall, r_undef) = ratio(tp, gold);
        let (f1, f_undef) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        let undefined = p_undef || r_undef || f_undef;
        if gold == 0 {
            notes.push(format!("class {} has zero support", matrix.classes[c]));
        } else if pred == 0 {
            notes.push(format!("class {} is never predicted", matrix.classes[c]));
        }
        per_class.push(ClassMetrics {
            class: matrix.classes[c].clone(),
            precision,
            recall,
            f1,
            support: gold,
            undefined,
        });
    }
    let trace: u64 = (0..k).map(|c| matrix.cells[c][c]).sum();
    let f1_macro = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    let f1_weighted = per_class
        .iter()
        .map(|m| m.f1 * m.support as f64)
        .sum::<f64>()
        / total as f64;
    Ok(EvalReport {
        classifier: classifier.to_string(),
        dataset: dataset.to_string(),
        accuracy: trace as f64 / total as f64,
        f1_macro,
        f1_weighted,
        per_class,
        confusion: matrix.clone(),
        coverage: 1.0,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Rendered overall and per-class tables.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub overall: String,
    pub per_class: String,
}

impl RenderedReport {
    pub fn combined(&self) -> String {
        format!("{}\n{}", self.overall, self.per_class)
    }
}

// Column values are compared after display rounding so that a tie at the
// shown precision marks every tied row.
fn best_flags(values: &[f64], decimals: usize) -> Vec<bool> {
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.decimals$}")).collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = format!("{max:.decimals$}");
    shown.iter().map(|s| *s == best).collect()
}

struct Cell {
    text: String,
    best: bool,
}

fn mark(cell: &Cell, format: ReportFormat) -> String {
    match (format, cell.best) {
        (ReportFormat::Markdown, true) => format!("**{}**", cell.text),
        (ReportFormat::Text, true) => format!("{}*", cell.text),
        _ => cell.text.clone(),
    }
}

fn table(header: &[&str], rows: &[(String, Vec<Cell>)], format: ReportFormat) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, cells)| {
            std::iter::once(name.clone())
                .chain(cells.iter().map(|c| mark(c, format)))
                .collect()
        })
        .collect();
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let rule: Vec<&str> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { ":---" } else { "---:" })
                .collect();
            let _ = writeln!(out, "| {} |", rule.join(" | "));
            for row in &body {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
        }
        ReportFormat::Text => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in &body {
                for (w, c) in widths.iter_mut().zip(row) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: Vec<&str>| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, &w))| {
                        if i == 0 {
                            format!("{c:<w$}")
                        } else {
                            format!("{c:>w$}")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(header.to_vec()));
            for row in &body {
                let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
            }
        }
        ReportFormat::Csv => unreachable!("csv is rendered without marks"),
    }
    out
}

/// Renders an overall table (accuracy, macro-F1, weighted-F1) and a per-class
/// F1 table. Best values per column are bolded in markdown and starred in text.
/// CSV output carries raw values at 3 decimals and no marks.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<RenderedReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Comparison("no reports to render".into()))?;
    let classes = &first.confusion.classes;
    if let Some(r) = reports.iter().find(|r| &r.confusion.classes != classes) {
        return Err(Error::Comparison(format!(
            "report `{}` uses classes {:?}, expected {:?}",
            r.classifier, r.confusion.classes, classes
        )));
    }

    if format == ReportFormat::Csv {
        let mut overall = String::from("classifier,accuracy,f1_macro,f1_weighted\n");
        let mut per_class = String::from("classifier,class,precision,recall,f1,support\n");
        for r in reports {
            let _ = writeln!(
                overall,
                "{},{:.3},{:.3},{:.3}",
                r.classifier, r.accuracy, r.f1_macro, r.f1_weighted
            );
            for c in &r.per_class {
                let _ = writeln!(
                    per_class,
                    "{},{},{:.3},{:.3},{:.3},{}",
                    r.classifier, c.class, c.precision, c.recall, c.f1, c.support
                );
            }
        }
        return Ok(RenderedReport { overall, per_class });
    }

    let acc = best_flags(
        &reports
            .iter()
            .map(|r| r.accuracy * 100.0)
            .collect::<Vec<_>>(),
        1,
    );
    let macro_ = best_flags(&reports.iter().map(|r| r.f1_macro).collect::<Vec<_>>(), 3);
    let wtd = best_flags(
        &reports.iter().map(|r| r.f1_weighted).collect::<Vec<_>>(),
        3,
    );
    let overall_rows: Vec<(String, Vec<Cell>)> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.classifier.clone(),
                vec![
                    Cell {
                        text: format!("{:.1}%", r.accuracy * 100.0),
                        best: acc[i],
                    },
                    Cell {
                        text: format!("{:.3}", r.f1_macro),
                        best: macro_[i],
                    },
                    Cell {
                        text: format!("{:.3}", r.f1_weighted),
                        best: wtd[i],
                    },
                ],
            )
        })
        .collect();
    let overall = table(
        &["Classifier", "Accuracy", "F1 Macro", "F1 Wtd."],
        &overall_rows,
        format,
    );

    let per_col: Vec<Vec<bool>> = (0..classes.len())
        .map(|c| {
            best_flags(
                &reports
                    .iter()
                    .map(|r| r.per_class[c].f1)
                    .collect::<Vec<_>>(),
                3,
            )
        })
        .collect();
    let class_rows: Vec<(String, Vec<Cell>)> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cells = r
                .per_class
                .iter()
                .enumerate()
                .map(|(c, m)| Cell {
                    text: format!("{:.3}", m.f1),
                    best: per_col[c][i],
                })
                .collect();
            (r.classifier.clone(), cells)
        })
        .collect();
    let mut header = vec!["Classifier"];
    header.extend(classes.iter().map(String::as_str));
    let per_class = table(&header, &class_rows, format);
    Ok(RenderedReport { overall, per_class })
}
