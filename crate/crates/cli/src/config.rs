//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line flags. The merged result is what every command runs with and
//! what it writes to `effective_config.toml`.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use ctxsent::benchmark::SyntheticSpec;
use ctxsent::labeling::{HttpLabelingConfig, LabelingPolicy};
use ctxsent::model::{InputMode, ModelConfig};
use ctxsent::training::TrainConfig;

use crate::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { fraction: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSection {
    /// Upper bound; the trained vocabulary may be smaller.
    pub size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { size: 8000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingSection {
    pub policy: LabelingPolicy,
    pub http: HttpLabelingConfig,
    /// High / medium / low proportions of the offline mock labeler.
    pub mock_tiers: [f64; 3],
}

impl Default for LabelingSection {
    fn default() -> Self {
        LabelingSection {
            policy: LabelingPolicy::default(),
            http: HttpLabelingConfig::default(),
            mock_tiers: [0.726, 0.268, 0.006],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub max_in_flight: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root of all randomness. Copied into `model.init_seed`, `train.seed`
    /// and `synth.seed` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub schema: String,
    pub input_mode: InputMode,
    pub split: SplitSection,
    pub vocab: VocabSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub labeling: LabelingSection,
    pub eval: EvalSection,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            schema: "three-class".into(),
            input_mode: InputMode::default(),
            split: SplitSection::default(),
            vocab: VocabSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            labeling: LabelingSection::default(),
            eval: EvalSection::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing the effective config")
    }

    /// The seed, or a validation error naming the command that needs it.
    pub fn require_seed(&self, command: &str) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| {
            Invalid(format!(
                "`{command}` is stochastic and needs a seed: pass --seed or set `seed` in the config file"
            ))
            .into()
        })
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if !is_tagged(b) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Tables with a `kind` key are enum values and are replaced whole.
fn is_tagged(t: &Table) -> bool {
    t.contains_key("kind")
}

/// Rejects keys that the defaults do not know, so a typo is an error rather
/// than a silently ignored setting.
fn check_known(defaults: &Table, given: &Table, prefix: &str) -> anyhow::Result<()> {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match defaults.get(k) {
            None if path == "seed" => {}
            None => return Err(Invalid(format!("unknown config key `{path}`")).into()),
            Some(Value::Table(d)) if !is_tagged(d) => match v {
                Value::Table(g) => check_known(d, g, &path)?,
                _ => return Err(Invalid(format!("config key `{path}` must be a table")).into()),
            },
            Some(_) => {}
        }
    }
    Ok(())
}

fn set_path(table: &mut Table, path: &str, value: Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Invalid(format!("bad key `{path}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!(Invalid(format!("`{p}` in `{path}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Everything the command line contributes to the configuration.
#[derive(Debug, Default)]
pub struct Layers {
    pub file: Option<std::path::PathBuf>,
    /// `key=value` pairs from `--set`, applied in order.
    pub sets: Vec<String>,
    /// Dedicated flags, already turned into dotted keys; applied last.
    pub flags: Vec<(String, Value)>,
}

pub fn resolve(layers: &Layers) -> anyhow::Result<RunConfig> {
    let defaults = Table::try_from(RunConfig::default()).context("serializing defaults")?;
    let mut overrides = Table::new();
    if let Some(path) = &layers.file {
        overrides = read_file(path)?;
    }
    for s in &layers.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Invalid(format!("--set expects KEY=VALUE, got `{s}`")))?;
        set_path(&mut overrides, k.trim(), parse_value(v.trim()))?;
    }
    for (k, v) in &layers.flags {
        set_path(&mut overrides, k, v.clone())?;
    }
    check_known(&defaults, &overrides, "")?;
    let mut merged = defaults;
    merge(&mut merged, overrides);
    let mut cfg: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Invalid(format!("invalid configuration: {e}")))?;
    if let Some(seed) = cfg.seed {
        if seed > i64::MAX as u64 {
            bail!(Invalid(format!("seed {seed} does not fit a TOML integer")));
        }
        cfg.model.init_seed = seed;
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn read_file(path: &Path) -> anyhow::Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Invalid(format!("config file {}: {e}", path.display())).into())
}
