use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NEGATIF: &str = "Negatif";
pub const NETRAL: &str = "Netral";
pub const POSITIF: &str = "Positif";

/// How a child schema is derived from a parent: classes in `drop` are
/// removed, the rest are re-indexed through `mapping` (parent index → child index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remap {
    pub parent: String,
    pub drop: Vec<String>,
    pub mapping: Vec<(usize, usize)>,
}

/// The class set of a task. Indices are positions in `classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub classes: Vec<String>,
    pub remap: Option<Remap>,
}

impl LabelSchema {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        let schema = LabelSchema {
            name: name.into(),
            classes,
            remap: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Negatif=0, Netral=1, Positif=2.
    pub fn three_class() -> Self {
        LabelSchema {
            name: "three-class".into(),
            classes: vec![NEGATIF.into(), NETRAL.into(), POSITIF.into()],
            remap: None,
        }
    }

    /// Negatif=0, Positif=1, derived from the three-class schema by dropping Netral.
    pub fn binary() -> Self {
        LabelSchema {
            name: "binary".into(),
            classes: vec![NEGATIF.into(), POSITIF.into()],
            remap: Some(Remap {
                parent: "three-class".into(),
                drop: vec![NETRAL.into()],
                mapping: vec![(0, 0), (2, 1)],
            }),
        }
    }

    /// Looks up a built-in schema by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "three-class" | "three_class" | "3" => Ok(Self::three_class()),
            "binary" | "2" => Ok(Self::binary()),
            other => Err(Error::Schema(format!("no built-in schema named `{other}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn resolve(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::UnknownLabel {
            label: name.to_string(),
            schema: self.name.clone(),
        })
    }

    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Schema(format!(
                "`{}` needs at least two classes",
                self.name
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(Error::Schema(format!("class {i} has an empty name")));
            }
            if self.classes[..i].contains(c) {
                return Err(Error::Schema(format!("class name `{c}` is not unique")));
            }
        }
        if let Some(remap) = &self.remap {
            let mut targets: Vec<usize> = remap.mapping.iter().map(|&(_, c)| c).collect();
            targets.sort_unstable();
            if targets != (0..self.classes.len()).collect::<Vec<_>>() {
                return Err(Error::Schema(format!(
                    "remap of `{}` must cover child indices 0..{} exactly once",
                    self.name,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Maps a parent-schema index into this schema; `None` means the class is dropped.
    pub fn map_from_parent(&self, parent_index: usize) -> Option<usize> {
        self.remap.as_ref().and_then(|r| {
            r.mapping
                .iter()
                .find(|&&(p, _)| p == parent_index)
                .map(|&(_, c)| c)
        })
    }
}
