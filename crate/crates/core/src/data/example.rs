use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::schema::LabelSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Formal,
    Informal,
    Implicit,
    Synthetic,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Formal => "formal",
            SourceKind::Informal => "informal",
            SourceKind::Implicit => "implicit",
            SourceKind::Synthetic => "synthetic",
        }
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
    #[default]
    Unknown,
}

impl Confidence {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Confidence::Unknown)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Medium => "medium",
            Confidence::Low => "low",
            Confidence::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevancy {
    Relevant,
    NotRelevant,
}

impl Relevancy {
    pub fn as_str(self) -> &'static str {
        match self {
            Relevancy::Relevant => "relevant",
            Relevancy::NotRelevant => "not_relevant",
        }
    }
}

/// One line of a dataset file. The label is a class name and may be absent
/// (pairs that still await labeling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub context: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_kind: Option<SourceKind>,
    #[serde(default, skip_serializing_if = "Confidence::is_unknown")]
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevancy: Option<Relevancy>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PairRecord {
    pub fn new(id: impl Into<String>, context: impl Into<String>, text: impl Into<String>) -> Self {
        PairRecord {
            id: id.into(),
            context: context.into(),
            text: text.into(),
            label: None,
            topic_id: None,
            source_kind: None,
            confidence: Confidence::Unknown,
            relevancy: None,
            extra: Map::new(),
        }
    }
}

/// A labeled (context, text) pair under some [`LabelSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub id: String,
    pub context: String,
    pub text: String,
    pub label: usize,
    pub topic_id: Option<String>,
    pub source_kind: Option<SourceKind>,
    pub confidence: Confidence,
    pub relevancy: Option<Relevancy>,
    pub extra: Map<String, Value>,
}

impl PairExample {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        text: impl Into<String>,
        label: usize,
    ) -> Self {
        PairExample {
            id: id.into(),
            context: context.into(),
            text: text.into(),
            label,
            topic_id: None,
            source_kind: None,
            confidence: Confidence::Unknown,
            relevancy: None,
            extra: Map::new(),
        }
    }

    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let fail = |message: &str| Error::InvalidExample {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(fail("empty id"));
        }
        if self.context.trim().is_empty() {
            return Err(fail("empty context"));
        }
        if self.text.trim().is_empty() {
            return Err(fail("empty text"));
        }
        if self.label >= schema.len() {
            return Err(fail(&format!(
                "label index {} outside schema `{}`",
                self.label, schema.name
            )));
        }
        Ok(())
    }

    pub fn from_record(record: PairRecord, schema: &LabelSchema) -> Result<Self> {
        let label_name = record
            .label
            .as_deref()
            .ok_or_else(|| Error::InvalidExample {
                id: record.id.clone(),
                message: "missing label".into(),
            })?;
        let label = schema.resolve(label_name)?;
        let example = PairExample {
            id: record.id,
            context: record.context,
            text: record.text,
            label,
            topic_id: record.topic_id,
            source_kind: record.source_kind,
            confidence: record.confidence,
            relevancy: record.relevancy,
            extra: record.extra,
        };
        example.validate(schema)?;
        Ok(example)
    }

    pub fn to_record(&self, schema: &LabelSchema) -> PairRecord {
        PairRecord {
            id: self.id.clone(),
            context: self.context.clone(),
            text: self.text.clone(),
            label: schema.name_of(self.label).map(str::to_string),
            topic_id: self.topic_id.clone(),
            source_kind: self.source_kind,
            confidence: self.confidence,
            relevancy: self.relevancy,
            extra: self.extra.clone(),
        }
    }
}

/// Reads JSON-lines records. Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<PairRecord>> {
    Ok(read_records_numbered(reader)?
        .into_iter()
        .map(|(_, record)| record)
        .collect())
}

pub fn write_records<W: Write>(mut writer: W, records: &[PairRecord]) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))
}

/// Loads and validates a labeled dataset, preserving file order.
pub fn load_dataset<R: BufRead>(reader: R, schema: &LabelSchema) -> Result<Vec<PairExample>> {
    let mut seen = HashSet::new();
    let mut dataset = Vec::new();
    for (line, record) in read_records_numbered(reader)? {
        let example = PairExample::from_record(record, schema).map_err(|e| match e {
            Error::InvalidExample { id, message } => Error::MalformedRecord {
                line,
                message: format!("`{id}`: {message}"),
            },
            other => other,
        })?;
        if !seen.insert(example.id.clone()) {
            return Err(Error::DuplicateId(example.id));
        }
        dataset.push(example);
    }
    Ok(dataset)
}

fn read_records_numbered<R: BufRead>(reader: R) -> Result<Vec<(usize, PairRecord)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(
    writer: W,
    dataset: &[PairExample],
    schema: &LabelSchema,
) -> Result<()> {
    let records: Vec<PairRecord> = dataset.iter().map(|e| e.to_record(schema)).collect();
    write_records(writer, &records)
}

pub fn load_dataset_file(path: &Path, schema: &LabelSchema) -> Result<Vec<PairExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_dataset(BufReader::new(file), schema)
}

pub fn read_records_file(path: &Path) -> Result<Vec<PairRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file))
}

pub fn save_dataset_file(path: &Path, dataset: &[PairExample], schema: &LabelSchema) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(BufWriter::new(file), dataset, schema)
}

pub fn save_records_file(path: &Path, records: &[PairRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(file), records)
}
