use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::PairExample;
use crate::error::{Error, Result};
use crate::model::{EncoderClassifier, InputMode};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    ContextConditioned,
    ContextFree,
}

impl AdapterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterMode::ContextConditioned => "context_conditioned",
            AdapterMode::ContextFree => "context_free",
        }
    }
}

/// A classifier under evaluation. `ContextFree` adapters must give the same
/// answer for a text whatever context accompanies it.
pub trait ClassifierAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn mode(&self) -> AdapterMode;
    fn predict(&self, context: &str, text: &str) -> Result<usize>;

    /// Remote adapters are evaluated with bounded concurrency and cached.
    fn is_remote(&self) -> bool {
        false
    }

    /// Identity used in prediction-cache keys; changes when the underlying
    /// classifier changes.
    fn fingerprint(&self) -> String {
        self.name().to_string()
    }
}

/// The in-repo encoder classifier. A context-blind model is context free.
pub struct LocalModelAdapter {
    name: String,
    model: Arc<EncoderClassifier>,
    vocab: Arc<Vocab>,
    input_mode: InputMode,
    fingerprint: String,
}

impl LocalModelAdapter {
    pub fn new(
        name: impl Into<String>,
        model: EncoderClassifier,
        vocab: Vocab,
        input_mode: InputMode,
    ) -> Self {
        let name = name.into();
        let fingerprint = format!("{name}:{}:{}", input_mode.as_str(), vocab.fingerprint());
        LocalModelAdapter {
            name,
            model: Arc::new(model),
            vocab: Arc::new(vocab),
            input_mode,
            fingerprint,
        }
    }

    pub fn model(&self) -> &EncoderClassifier {
        &self.model
    }
}

impl ClassifierAdapter for LocalModelAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> AdapterMode {
        match self.input_mode {
            InputMode::ContextConditioned => AdapterMode::ContextConditioned,
            InputMode::ContextBlind => AdapterMode::ContextFree,
        }
    }

    fn predict(&self, context: &str, text: &str) -> Result<usize> {
        Ok(self
            .model
            .predict(&self.vocab, self.input_mode, context, text)?
            .label)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Returns the gold label of the matching (context, text) pair.
pub struct OracleAdapter {
    name: String,
    gold: HashMap<(String, String), usize>,
}

impl OracleAdapter {
    pub fn new(name: impl Into<String>, dataset: &[PairExample]) -> Self {
        OracleAdapter {
            name: name.into(),
            gold: dataset
                .iter()
                .map(|e| ((e.context.clone(), e.text.clone()), e.label))
                .collect(),
        }
    }
}

impl ClassifierAdapter for OracleAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> AdapterMode {
        AdapterMode::ContextConditioned
    }

    fn predict(&self, context: &str, text: &str) -> Result<usize> {
        self.gold
            .get(&(context.to_string(), text.to_string()))
            .copied()
            .ok_or_else(|| Error::Adapter {
                adapter: self.name.clone(),
                message: "pair not in the oracle's dataset".into(),
            })
    }
}

pub struct ConstantAdapter {
    name: String,
    label: usize,
}

impl ConstantAdapter {
    pub fn new(name: impl Into<String>, label: usize) -> Self {
        ConstantAdapter {
            name: name.into(),
            label,
        }
    }
}

impl ClassifierAdapter for ConstantAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> AdapterMode {
        AdapterMode::ContextFree
    }

    fn predict(&self, _context: &str, _text: &str) -> Result<usize> {
        Ok(self.label)
    }
}

type PredictFn = dyn Fn(&str, &str) -> Result<usize> + Send + Sync;

/// Wraps a closure. Useful for baselines and for probing the harness itself.
pub struct FnAdapter {
    name: String,
    mode: AdapterMode,
    f: Box<PredictFn>,
}

impl FnAdapter {
    pub fn new(
        name: impl Into<String>,
        mode: AdapterMode,
        f: impl Fn(&str, &str) -> Result<usize> + Send + Sync + 'static,
    ) -> Self {
        FnAdapter {
            name: name.into(),
            mode,
            f: Box::new(f),
        }
    }
}

impl ClassifierAdapter for FnAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> AdapterMode {
        self.mode
    }

    fn predict(&self, context: &str, text: &str) -> Result<usize> {
        (self.f)(context, text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceViolation {
    pub text: String,
    pub predictions: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub adapter: String,
    pub texts_probed: usize,
    pub queries: usize,
    pub violations: Vec<InvarianceViolation>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Queries `adapter` with each text under every context and reports texts
/// whose label changed. Errors from the adapter are propagated.
pub fn probe_context_invariance(
    adapter: &dyn ClassifierAdapter,
    texts: &[String],
    contexts: &[String],
) -> Result<ProbeReport> {
    let mut violations = Vec::new();
    let mut queries = 0;
    for text in texts {
        let mut predictions = Vec::with_capacity(contexts.len());
        for ctx in contexts {
            predictions.push((ctx.clone(), adapter.predict(ctx, text)?));
            queries += 1;
        }
        if predictions.windows(2).any(|w| w[0].1 != w[1].1) {
            violations.push(InvarianceViolation {
                text: text.clone(),
                predictions,
            });
        }
    }
    Ok(ProbeReport {
        adapter: adapter.name().to_string(),
        texts_probed: texts.len(),
        queries,
        violations,
    })
}

/// Up to `max_texts` distinct texts and every distinct context of `dataset`,
/// both in first-seen order.
pub fn probe_inputs(dataset: &[PairExample], max_texts: usize) -> (Vec<String>, Vec<String>) {
    let mut texts = Vec::new();
    let mut contexts = Vec::new();
    let mut seen_t = std::collections::HashSet::new();
    let mut seen_c = std::collections::HashSet::new();
    for e in dataset {
        if texts.len() < max_texts && seen_t.insert(e.text.as_str()) {
            texts.push(e.text.clone());
        }
        if seen_c.insert(e.context.as_str()) {
            contexts.push(e.context.clone());
        }
    }
    (texts, contexts)
}
