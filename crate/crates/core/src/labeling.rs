//! LLM-assisted relabeling: prompt construction, strict response parsing,
//! bounded-concurrency requests with retries, and offline mock clients.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Confidence, LabelSchema, PairRecord};
use crate::error::{Error, Result};
use crate::pool::map_bounded;

pub const PROMPT_TEMPLATE_V1: &str = include_str!("../assets/label_prompt_v1.txt");
pub const PROMPT_VERSION: &str = "v1";
pub const API_KEY_ENV: &str = "CTXSENT_API_KEY";

/// Fills `{context}`, `{text}` and `{labels}` in one left-to-right pass, so
/// braces inside the substituted values are never re-expanded.
pub fn render_prompt(template: &str, context: &str, text: &str, schema: &LabelSchema) -> String {
    let labels = schema.classes.join(", ");
    let mut out = String::with_capacity(template.len() + context.len() + text.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let (value, len) = if tail.starts_with("{context}") {
            (context, "{context}".len())
        } else if tail.starts_with("{text}") {
            (text, "{text}".len())
        } else if tail.starts_with("{labels}") {
            (labels.as_str(), "{labels}".len())
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

pub fn build_prompt(context: &str, text: &str, schema: &LabelSchema) -> String {
    render_prompt(PROMPT_TEMPLATE_V1, context, text, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Medium, Tier::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Medium => "medium",
            Tier::Low => "low",
        }
    }

    pub fn confidence(self) -> Confidence {
        match self {
            Tier::High => Confidence::High,
            Tier::Medium => Confidence::Medium,
            Tier::Low => Confidence::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRequest {
    pub pair_id: String,
    pub context: String,
    pub text: String,
    pub schema: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelResponse {
    pub label: String,
    pub confidence: Tier,
    pub raw: String,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    label: String,
    confidence: String,
}

fn strip_fences(raw: &str) -> &str {
    let s = raw.trim();
    let Some(inner) = s.strip_prefix("```") else {
        return s;
    };
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    // Drop an info string such as `json` on the opening fence line.
    match inner.find('\n') {
        Some(nl) if !inner[..nl].trim_start().starts_with('{') => inner[nl + 1..].trim(),
        _ => inner.trim(),
    }
}

/// Strict parse of `{"label": ..., "confidence": ...}`. Code fences are
/// removed first; any other surrounding prose is an error.
pub fn parse_response(raw: &str, schema: &LabelSchema) -> Result<LabelResponse> {
    let body = strip_fences(raw);
    let wire: Wire = serde_json::from_str(body)
        .map_err(|e| Error::Response(format!("not a label object: {e}")))?;
    schema.resolve(&wire.label)?;
    let confidence = match wire.confidence.as_str() {
        "high" => Tier::High,
        "medium" => Tier::Medium,
        "low" => Tier::Low,
        other => {
            return Err(Error::Response(format!(
                "unknown confidence tier `{other}`"
            )))
        }
    };
    Ok(LabelResponse {
        label: wire.label,
        confidence,
        raw: raw.to_string(),
    })
}

pub fn serialize_response(r: &LabelResponse) -> String {
    serde_json::to_string(&Wire {
        label: r.label.clone(),
        confidence: r.confidence.as_str().to_string(),
    })
    .expect("plain strings serialize")
}

/// Something that turns a labeling request into the model's message content.
pub trait LabelingClient: Send + Sync {
    fn complete(&self, request: &LabelRequest) -> Result<String>;
}

/// OpenAI-style chat-completions endpoint with JSON-object output and
/// temperature 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpLabelingConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_ms: u64,
}

impl Default for HttpLabelingConfig {
    fn default() -> Self {
        HttpLabelingConfig {
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.0,
            timeout_ms: 60_000,
        }
    }
}

pub struct HttpLabelingClient {
    config: HttpLabelingConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLabelingClient {
    /// The API key is read from `CTXSENT_API_KEY` when `api_key` is `None`.
    pub fn new(config: HttpLabelingConfig, api_key: Option<String>) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("labeling endpoint is not set".into()));
        }
        if config.model.is_empty() {
            return Err(Error::Config("labeling model is not set".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpLabelingClient {
            api_key: api_key.or_else(|| std::env::var(API_KEY_ENV).ok()),
            config,
            agent,
        })
    }

    pub fn request_body(&self, request: &LabelRequest) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": request.prompt}],
        })
    }
}

impl LabelingClient for HttpLabelingClient {
    fn complete(&self, request: &LabelRequest) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(request))
            .map_err(|e| Error::Http(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Http(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(Error::Http(format!("status {status}: {body}")));
        }
        let v: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| Error::Response(format!("provider body is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Response("no choices[0].message.content in provider body".into()))
    }
}

/// Answers from a fixed table keyed by pair id.
pub struct LookupClient {
    table: HashMap<String, (String, Tier)>,
}

impl LookupClient {
    pub fn new(entries: impl IntoIterator<Item = (String, String, Tier)>) -> Self {
        LookupClient {
            table: entries.into_iter().map(|(id, l, t)| (id, (l, t))).collect(),
        }
    }
}

impl LabelingClient for LookupClient {
    fn complete(&self, request: &LabelRequest) -> Result<String> {
        let (label, tier) = self
            .table
            .get(&request.pair_id)
            .ok_or_else(|| Error::Response(format!("no mock entry for `{}`", request.pair_id)))?;
        Ok(serialize_response(&LabelResponse {
            label: label.clone(),
            confidence: *tier,
            raw: String::new(),
        }))
    }
}

/// Fails the first `failures` attempts for each pair, then defers to `inner`.
pub struct FlakyClient<C> {
    inner: C,
    failures: u32,
    seen: Mutex<HashMap<String, u32>>,
}

impl<C> FlakyClient<C> {
    pub fn new(inner: C, failures: u32) -> Self {
        FlakyClient {
            inner,
            failures,
            seen: Mutex::new(HashMap::new()),
        }
    }
}

impl<C: LabelingClient> LabelingClient for FlakyClient<C> {
    fn complete(&self, request: &LabelRequest) -> Result<String> {
        let attempt = {
            let mut seen = self.seen.lock().unwrap();
            let n = seen.entry(request.pair_id.clone()).or_default();
            *n += 1;
            *n
        };
        if attempt <= self.failures {
            return Err(Error::Http(format!("simulated failure {attempt}")));
        }
        self.inner.complete(request)
    }
}

/// Deterministic offline labeler: label and tier are derived from a hash of
/// (seed, pair id), with tiers drawn at the given proportions.
pub struct SeededMockClient {
    seed: u64,
    classes: Vec<String>,
    tier_weights: [f64; 3],
}

impl SeededMockClient {
    pub fn new(seed: u64, schema: &LabelSchema, tier_weights: [f64; 3]) -> Self {
        SeededMockClient {
            seed,
            classes: schema.classes.clone(),
            tier_weights,
        }
    }

    fn draw(&self, pair_id: &str) -> (usize, Tier) {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(pair_id.as_bytes())
            .finalize();
        let a = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let b = u64::from_le_bytes(digest[8..16].try_into().unwrap());
        let u = (b >> 11) as f64 / (1u64 << 53) as f64;
        let total: f64 = self.tier_weights.iter().sum();
        let mut acc = 0.0;
        let mut tier = Tier::Low;
        for (t, w) in Tier::ALL.iter().zip(self.tier_weights) {
            acc += w / total;
            if u < acc {
                tier = *t;
                break;
            }
        }
        ((a % self.classes.len() as u64) as usize, tier)
    }
}

impl LabelingClient for SeededMockClient {
    fn complete(&self, request: &LabelRequest) -> Result<String> {
        let (label, tier) = self.draw(&request.pair_id);
        Ok(serialize_response(&LabelResponse {
            label: self.classes[label].clone(),
            confidence: tier,
            raw: String::new(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingPolicy {
    /// Total attempts per pair, first try included.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_in_flight: usize,
    /// Abort once failed / attempted pairs exceeds this fraction...
    pub failure_threshold: f64,
    /// ...and at least this many pairs have been attempted.
    pub min_attempted_for_abort: usize,
}

impl Default for LabelingPolicy {
    fn default() -> Self {
        LabelingPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            max_in_flight: 4,
            failure_threshold: 0.2,
            min_attempted_for_abort: 20,
        }
    }
}

impl LabelingPolicy {
    fn backoff(&self, failed_attempt: u32) -> Duration {
        let factor = 1u64 << (failed_attempt - 1).min(20);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelingRunStats {
    pub attempted: usize,
    pub labeled: usize,
    pub skipped: usize,
    pub failed: usize,
    pub retries: usize,
    pub per_tier: BTreeMap<String, usize>,
    pub per_label: BTreeMap<String, usize>,
}

impl LabelingRunStats {
    pub fn tier_percentages(&self) -> Vec<(String, f64)> {
        let total: usize = self.per_tier.values().sum();
        Tier::ALL
            .iter()
            .map(|t| {
                let n = self.per_tier.get(t.as_str()).copied().unwrap_or(0);
                let pct = if total == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / total as f64
                };
                (t.as_str().to_string(), pct)
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "attempted {}  labeled {}  failed {}  retries {}  skipped {}\n",
            self.attempted, self.labeled, self.failed, self.retries, self.skipped
        );
        for (tier, pct) in self.tier_percentages() {
            let n = self.per_tier.get(&tier).copied().unwrap_or(0);
            out.push_str(&format!("  {tier:<7} {n:>7}  {pct:>5.1}%\n"));
        }
        for (label, n) in &self.per_label {
            out.push_str(&format!("  {label:<7} {n:>7}\n"));
        }
        out
    }
}

pub struct LabelingOutcome {
    pub records: Vec<PairRecord>,
    pub stats: LabelingRunStats,
    /// Set when the failure threshold stopped the run early. `records` then
    /// holds everything labeled so far and can be fed back in to resume.
    pub aborted: bool,
    pub failure_threshold: f64,
}

impl LabelingOutcome {
    pub fn abort_error(&self) -> Option<Error> {
        self.aborted.then(|| Error::LabelingAborted {
            failed: self.stats.failed,
            attempted: self.stats.attempted,
            threshold: self.failure_threshold,
        })
    }
}

/// A record counts as done once it carries both a label and a confidence tier.
pub fn is_labeled(record: &PairRecord) -> bool {
    record.label.is_some() && !record.confidence.is_unknown()
}

struct PairResult {
    response: Option<LabelResponse>,
    attempts: u32,
}

fn label_one(
    client: &dyn LabelingClient,
    request: &LabelRequest,
    schema: &LabelSchema,
    policy: &LabelingPolicy,
    audit: &Mutex<Vec<String>>,
) -> PairResult {
    let max = policy.max_attempts.max(1);
    for attempt in 1..=max {
        let started = Instant::now();
        let outcome = client
            .complete(request)
            .and_then(|raw| parse_response(&raw, schema));
        let ms = started.elapsed().as_millis();
        let line = match &outcome {
            Ok(r) => format!(
                "{}\t{attempt}\t{ms}\tok {} {}",
                request.pair_id,
                r.label,
                r.confidence.as_str()
            ),
            Err(e) => format!(
                "{}\t{attempt}\t{ms}\terror {}",
                request.pair_id,
                e.to_string().replace(['\t', '\n'], " ")
            ),
        };
        audit.lock().unwrap().push(line);
        match outcome {
            Ok(response) => {
                return PairResult {
                    response: Some(response),
                    attempts: attempt,
                }
            }
            Err(e) => {
                log::debug!("pair {} attempt {attempt} failed: {e}", request.pair_id);
                if attempt < max {
                    std::thread::sleep(policy.backoff(attempt));
                }
            }
        }
    }
    PairResult {
        response: None,
        attempts: max,
    }
}

/// Labels every record that is not already labeled. Requests run on at most
/// `max_in_flight` threads; results are merged in input order by one writer.
/// Failed pairs keep no label. `audit` receives one line per attempt:
/// `pair_id<TAB>attempt<TAB>latency_ms<TAB>outcome`.
pub fn relabel_dataset(
    client: &dyn LabelingClient,
    records: &[PairRecord],
    schema: &LabelSchema,
    policy: &LabelingPolicy,
    mut audit: Option<&mut dyn Write>,
) -> Result<LabelingOutcome> {
    let mut out = records.to_vec();
    let mut stats = LabelingRunStats::default();
    for t in Tier::ALL {
        stats.per_tier.insert(t.as_str().to_string(), 0);
    }
    let pending: Vec<usize> = (0..records.len())
        .filter(|&i| !is_labeled(&records[i]))
        .collect();
    stats.skipped = records.len() - pending.len();
    let chunk = policy.max_in_flight.max(1) * 4;
    let mut aborted = false;
    for group in pending.chunks(chunk) {
        let requests: Vec<LabelRequest> = group
            .iter()
            .map(|&i| {
                let r = &records[i];
                LabelRequest {
                    pair_id: r.id.clone(),
                    context: r.context.clone(),
                    text: r.text.clone(),
                    schema: schema.name.clone(),
                    prompt: build_prompt(&r.context, &r.text, schema),
                }
            })
            .collect();
        let audit_lines = Mutex::new(Vec::new());
        let results = map_bounded(&requests, policy.max_in_flight, |_, req| {
            label_one(client, req, schema, policy, &audit_lines)
        });
        if let Some(w) = audit.as_mut() {
            for line in audit_lines.into_inner().unwrap() {
                writeln!(w, "{line}").map_err(|e| Error::io("audit log", e))?;
            }
        }
        for (&i, result) in group.iter().zip(results) {
            stats.attempted += 1;
            stats.retries += (result.attempts - 1) as usize;
            match result.response {
                Some(r) => {
                    stats.labeled += 1;
                    *stats
                        .per_tier
                        .entry(r.confidence.as_str().to_string())
                        .or_default() += 1;
                    *stats.per_label.entry(r.label.clone()).or_default() += 1;
                    out[i].label = Some(r.label);
                    out[i].confidence = r.confidence.confidence();
                }
                None => {
                    stats.failed += 1;
                    out[i].label = None;
                    out[i].confidence = Confidence::Unknown;
                }
            }
        }
        if stats.attempted >= policy.min_attempted_for_abort
            && stats.failed as f64 / stats.attempted as f64 > policy.failure_threshold
        {
            log::warn!(
                "aborting: {} of {} attempted pairs failed",
                stats.failed,
                stats.attempted
            );
            aborted = true;
            break;
        }
    }
    Ok(LabelingOutcome {
        records: out,
        stats,
        aborted,
        failure_threshold: policy.failure_threshold,
    })
}
