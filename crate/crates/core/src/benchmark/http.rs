//! Classifiers reached over HTTP, described by a request template and a JSON
//! pointer into the response.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::adapters::{AdapterMode, ClassifierAdapter};
use crate::data::LabelSchema;
use crate::error::{Error, Result};
use crate::labeling::API_KEY_ENV;

pub const TEXT_PLACEHOLDER: &str = "{{text}}";
pub const CONTEXT_PLACEHOLDER: &str = "{{context}}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAdapterConfig {
    pub name: String,
    pub mode: AdapterMode,
    pub endpoint: String,
    /// GET target of the registration probe; defaults to `endpoint`.
    #[serde(default)]
    pub health_url: Option<String>,
    /// JSON body with `{{text}}` and, for context-conditioned adapters,
    /// `{{context}}` inside string literals.
    pub request_template: String,
    /// JSON pointer to the predicted label in the response body.
    #[serde(default = "default_pointer")]
    pub response_label: String,
    /// Provider label → schema label name.
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Extra attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_pointer() -> String {
    "/label".into()
}
fn default_timeout() -> u64 {
    10_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    200
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("strings serialize");
    quoted[1..quoted.len() - 1].to_string()
}

/// Substitutes placeholders in one pass with JSON-escaped values.
pub fn render_template(template: &str, context: Option<&str>, text: &str) -> String {
    let mut out = String::with_capacity(template.len() + text.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        if tail.starts_with(TEXT_PLACEHOLDER) {
            out.push_str(&json_escape(text));
            rest = &tail[TEXT_PLACEHOLDER.len()..];
        } else if let (true, Some(ctx)) = (tail.starts_with(CONTEXT_PLACEHOLDER), context) {
            out.push_str(&json_escape(ctx));
            rest = &tail[CONTEXT_PLACEHOLDER.len()..];
        } else {
            out.push_str("{{");
            rest = &tail[2..];
        }
    }
    out.push_str(rest);
    out
}

pub struct HttpAdapter {
    config: HttpAdapterConfig,
    schema: LabelSchema,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpAdapter {
    /// Validates the template and probes the endpoint; an unreachable or
    /// failing endpoint is a registration error.
    pub fn register(config: HttpAdapterConfig, schema: &LabelSchema) -> Result<Self> {
        let bad = |m: String| Error::Adapter {
            adapter: config.name.clone(),
            message: m,
        };
        if !config.request_template.contains(TEXT_PLACEHOLDER) {
            return Err(bad(format!("request template lacks {TEXT_PLACEHOLDER}")));
        }
        let has_ctx = config.request_template.contains(CONTEXT_PLACEHOLDER);
        match config.mode {
            AdapterMode::ContextFree if has_ctx => {
                return Err(bad(format!(
                    "context-free template must not contain {CONTEXT_PLACEHOLDER}"
                )))
            }
            AdapterMode::ContextConditioned if !has_ctx => {
                return Err(bad(format!(
                    "context-conditioned template lacks {CONTEXT_PLACEHOLDER}"
                )))
            }
            _ => {}
        }
        let sample = render_template(&config.request_template, Some("c"), "t");
        serde_json::from_str::<serde_json::Value>(&sample).map_err(|e| {
            bad(format!(
                "request template is not valid JSON once filled: {e}"
            ))
        })?;
        for target in config.label_map.values() {
            schema.resolve(target)?;
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let health = config
            .health_url
            .clone()
            .unwrap_or_else(|| config.endpoint.clone());
        let resp = agent
            .get(&health)
            .call()
            .map_err(|e| bad(format!("health probe to {health} failed: {e}")))?;
        if !resp.status().is_success() {
            return Err(bad(format!(
                "health probe to {health} returned {}",
                resp.status()
            )));
        }
        Ok(HttpAdapter {
            schema: schema.clone(),
            agent,
            api_key: std::env::var(API_KEY_ENV).ok(),
            config,
        })
    }

    pub fn request_body(&self, context: &str, text: &str) -> String {
        let ctx = match self.config.mode {
            AdapterMode::ContextConditioned => Some(context),
            AdapterMode::ContextFree => None,
        };
        render_template(&self.config.request_template, ctx, text)
    }

    fn err(&self, message: String) -> Error {
        Error::Adapter {
            adapter: self.config.name.clone(),
            message,
        }
    }

    fn attempt(&self, body: &str) -> Result<usize> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| Error::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Http(format!("status {status}")));
        }
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| self.err(format!("response is not JSON: {e}")))?;
        let raw = match v.pointer(&self.config.response_label) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                return Err(self.err(format!(
                    "no label at `{}` in response",
                    self.config.response_label
                )))
            }
        };
        let name = self.config.label_map.get(&raw).cloned().unwrap_or(raw);
        self.schema.resolve(&name)
    }
}

impl ClassifierAdapter for HttpAdapter {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn mode(&self) -> AdapterMode {
        self.config.mode
    }

    fn predict(&self, context: &str, text: &str) -> Result<usize> {
        let body = self.request_body(context, text);
        let mut last = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1).min(10),
                ));
            }
            match self.attempt(&body) {
                Ok(label) => return Ok(label),
                // Only transport failures are worth retrying.
                Err(e @ Error::Http(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(self.err(format!("gave up: {}", last.expect("at least one attempt"))))
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn fingerprint(&self) -> String {
        format!("{}@{}", self.config.name, self.config.endpoint)
    }
}
