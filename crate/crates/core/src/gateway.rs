//! Provider-agnostic chat completion with retries, usage capture and cost.
//!
//! Three transports ship with the crate: [`HttpTransport`] for live
//! endpoints, [`ReplayTransport`] for recorded fixtures and [`StubTransport`]
//! for canned responses keyed by request tag.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hash::content_hash;
use crate::protocol::PromptPair;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;
pub const FALLBACK_TEMPERATURE: f64 = 1.0;
const BODY_EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// `choices[0].message.content`, bearer auth.
    #[default]
    Openai,
    /// `content[].text`, `x-api-key` auth.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub input_price_per_1m: f64,
    pub output_price_per_1m: f64,
    pub supports_temperature_zero: bool,
    /// Used instead of 0.0 when the provider rejects it.
    pub fallback_temperature: f64,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub dialect: Dialect,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            model_name: String::new(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            input_price_per_1m: 0.0,
            output_price_per_1m: 0.0,
            supports_temperature_zero: true,
            fallback_temperature: FALLBACK_TEMPERATURE,
            request_timeout_secs: 300.0,
            max_retries: 3,
            endpoint: None,
            api_key_env: None,
            dialect: Dialect::Openai,
        }
    }
}

impl ModelSpec {
    pub fn named(model_name: &str) -> ModelSpec {
        ModelSpec { model_name: model_name.to_string(), ..ModelSpec::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidSpec(format!("{}: {m}", self.model_name)));
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_output_tokens < 1 {
            return bad("max_output_tokens must be >= 1");
        }
        for p in [self.input_price_per_1m, self.output_price_per_1m] {
            if !(p.is_finite() && p >= 0.0) {
                return bad("prices must be finite and >= 0");
            }
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return bad("request_timeout_secs must be > 0");
        }
        Ok(())
    }

    /// The temperature actually sent, plus a diagnostic when it differs from
    /// the requested one.
    pub fn effective_temperature(&self) -> (f64, Option<String>) {
        if self.temperature == 0.0 && !self.supports_temperature_zero {
            let t = self.fallback_temperature;
            (t, Some(format!("temperature 0.0 unsupported by {}; effective temperature {t:.1}", self.model_name)))
        } else {
            (self.temperature, None)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage { input_tokens: self.input_tokens + o.input_tokens, output_tokens: self.output_tokens + o.output_tokens }
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        *self = *self + o;
    }
}

impl Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

/// US dollars held as integer nano-dollars so sums are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cost(u64);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    pub fn from_nanos(nanos: u64) -> Cost {
        Cost(nanos)
    }

    pub fn from_micros(micros: u64) -> Cost {
        Cost(micros * 1000)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let precision = f.precision().unwrap_or(6);
        write!(f, "{:.*}", precision, self.dollars())
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost(self.0 + o.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        self.0 += o.0;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        Cost(iter.map(|c| c.0).sum())
    }
}

impl Serialize for Cost {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Cost, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(serde::de::Error::custom(format!("invalid cost {v}")));
        }
        Ok(Cost((v * 1e9).round() as u64))
    }
}

/// `in/1e6 * price_in + out/1e6 * price_out`, rounded to the nano-dollar.
pub fn cost_of(usage: Usage, spec: &ModelSpec) -> Cost {
    let nanos = (usage.input_tokens as f64 * spec.input_price_per_1m + usage.output_tokens as f64 * spec.output_price_per_1m) * 1000.0;
    Cost(nanos.round() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub backend_latency_ms: u64,
    #[serde(default)]
    pub from_fixture: bool,
    #[serde(default)]
    pub retry_count: u32,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub spec: ModelSpec,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    /// Caller label: the task id for audits, `issue::finding` for the judge.
    pub tag: String,
    pub fixture_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReply {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub from_fixture: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("no fixture for key {0}")]
    FixtureMiss(String),
    #[error("fixture {key} is corrupt: {reason}")]
    FixtureCorrupt { key: String, reason: String },
    #[error("{0}")]
    Other(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider error (HTTP {status}): {body}")]
    ProviderError { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("credentials missing: environment variable {env} is not set")]
    AuthMissing { env: String },
    #[error("no recorded fixture for key {key}")]
    FixtureMiss { key: String },
    #[error("fixture {key} is corrupt: {reason}")]
    FixtureCorrupt { key: String, reason: String },
    #[error("transport failure: {0}")]
    Transport(String),
}

impl From<TransportError> for GatewayError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => GatewayError::Timeout,
            TransportError::Http { status, body } => GatewayError::ProviderError { status, body },
            TransportError::AuthMissing(env) => GatewayError::AuthMissing { env },
            TransportError::FixtureMiss(key) => GatewayError::FixtureMiss { key },
            TransportError::FixtureCorrupt { key, reason } => GatewayError::FixtureCorrupt { key, reason },
            other => GatewayError::Transport(other.to_string()),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportError>;

    /// Whether a call touches the network; counted by the gateway.
    fn is_network(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    /// Fractional jitter applied symmetrically, 0.2 meaning ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base_delay: Duration::from_secs(1), jitter: 0.2 }
    }
}

impl RetryPolicy {
    pub fn immediate() -> RetryPolicy {
        RetryPolicy { base_delay: Duration::ZERO, jitter: 0.0 }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(attempt.min(16) as i32);
        if nominal == 0.0 {
            return Duration::ZERO;
        }
        let factor = if self.jitter > 0.0 { rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter) } else { 1.0 };
        Duration::from_secs_f64(nominal * factor)
    }
}

/// Fixture key for a prompt sent to a model.
pub fn fixture_key(model_name: &str, context_fingerprint: &str) -> String {
    content_hash(&[model_name, context_fingerprint])
}

pub struct Gateway {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    recorder: Option<FixtureStore>,
    calls: AtomicU64,
    attempts: AtomicU64,
    network_ops: AtomicU64,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Gateway {
        Gateway {
            transport,
            retry: RetryPolicy::default(),
            recorder: None,
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            network_ops: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Gateway {
        self.retry = retry;
        self
    }

    /// Also writes every successful completion into `store`.
    pub fn recording_to(mut self, store: FixtureStore) -> Gateway {
        self.recorder = Some(store);
        self
    }

    /// Logical `complete` invocations.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Transport sends including retries.
    pub fn attempt_count(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn network_count(&self) -> u64 {
        self.network_ops.load(Ordering::SeqCst)
    }

    pub fn complete(&self, spec: &ModelSpec, pair: &PromptPair, tag: &str) -> Result<Completion, GatewayError> {
        spec.validate()?;
        if pair.system.is_empty() || pair.user.is_empty() {
            return Err(GatewayError::InvalidSpec("prompt pair has an empty message".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (temperature, temp_diag) = spec.effective_temperature();
        let request = ChatRequest {
            spec: spec.clone(),
            system: pair.system.clone(),
            user: pair.user.clone(),
            temperature,
            tag: tag.to_string(),
            fixture_key: fixture_key(&spec.model_name, &pair.context_fingerprint),
        };

        let mut diagnostics: Vec<String> = temp_diag.into_iter().collect();
        let mut attempt = 0u32;
        loop {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            if self.transport.is_network() {
                self.network_ops.fetch_add(1, Ordering::SeqCst);
            }
            match self.transport.send(&request) {
                Ok(reply) => {
                    let completion = Completion {
                        text: reply.text,
                        usage: reply.usage,
                        backend_latency_ms: reply.latency_ms,
                        from_fixture: reply.from_fixture,
                        retry_count: attempt,
                        diagnostics,
                    };
                    if let Some(store) = &self.recorder {
                        store.record(&request.fixture_key, &completion)?;
                    }
                    return Ok(completion);
                }
                Err(e) if e.is_transient() => {
                    if attempt >= spec.max_retries {
                        return Err(GatewayError::RetriesExhausted { attempts: attempt + 1, last: e.to_string() });
                    }
                    diagnostics.push(format!("attempt {} failed: {e}", attempt + 1));
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// One JSON file per key. Writes go to a temp file that is renamed into place,
/// so concurrent readers never see a partial fixture.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> FixtureStore {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn record(&self, key: &str, completion: &Completion) -> Result<(), GatewayError> {
        let io = |e: std::io::Error| GatewayError::Transport(format!("writing fixture {key}: {e}"));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let mut stored = completion.clone();
        stored.from_fixture = false;
        let body = serde_json::to_string_pretty(&stored).expect("completion serializes");
        let n = TMP_COUNTER.fetch_add(1, Ordering::SeqCst);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        fs::write(&tmp, body + "\n").map_err(io)?;
        fs::rename(&tmp, self.path(key)).map_err(io)
    }

    /// `Ok(None)` is a miss.
    pub fn replay(&self, key: &str) -> Result<Option<Completion>, GatewayError> {
        let path = self.path(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::FixtureCorrupt { key: key.to_string(), reason: e.to_string() }),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| GatewayError::FixtureCorrupt { key: key.to_string(), reason: e.to_string() })
    }
}

pub struct ReplayTransport {
    store: FixtureStore,
}

impl ReplayTransport {
    pub fn new(store: FixtureStore) -> ReplayTransport {
        ReplayTransport { store }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportError> {
        match self.store.replay(&request.fixture_key) {
            Ok(Some(c)) => Ok(TransportReply { text: c.text, usage: c.usage, latency_ms: c.backend_latency_ms, from_fixture: true }),
            Ok(None) => Err(TransportError::FixtureMiss(request.fixture_key.clone())),
            Err(GatewayError::FixtureCorrupt { key, reason }) => Err(TransportError::FixtureCorrupt { key, reason }),
            Err(e) => Err(TransportError::Other(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum StubEntry {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        usage: Option<Usage>,
        /// HTTP statuses returned, in order, before the text is served.
        #[serde(default)]
        fail_with: Vec<u16>,
    },
}

#[derive(Debug, Deserialize)]
struct StubFile {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    responses: BTreeMap<String, StubEntry>,
}

pub const STUB_AUDIT_DEFAULT: &str = "[]";
pub const STUB_JUDGE_DEFAULT: &str = r#"{"verdict": "UNRELATED", "reasoning": "stub default"}"#;

/// Canned responses keyed by request tag. Usage is estimated at one token per
/// four characters unless the entry pins it.
pub struct StubTransport {
    default: String,
    responses: BTreeMap<String, StubEntry>,
    served: Mutex<HashMap<String, usize>>,
}

#[derive(Debug, Error)]
pub enum StubError {
    #[error("reading stub file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("stub file {path} is malformed: {source}")]
    Malformed { path: String, source: serde_json::Error },
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl StubTransport {
    pub fn new(default: &str) -> StubTransport {
        StubTransport { default: default.to_string(), responses: BTreeMap::new(), served: Mutex::new(HashMap::new()) }
    }

    pub fn with_response(mut self, tag: &str, text: &str) -> StubTransport {
        self.responses.insert(tag.to_string(), StubEntry::Text(text.to_string()));
        self
    }

    pub fn with_usage(mut self, tag: &str, text: &str, usage: Usage) -> StubTransport {
        self.responses.insert(tag.to_string(), StubEntry::Full { text: text.to_string(), usage: Some(usage), fail_with: vec![] });
        self
    }

    pub fn with_failures(mut self, tag: &str, text: &str, statuses: &[u16]) -> StubTransport {
        self.responses
            .insert(tag.to_string(), StubEntry::Full { text: text.to_string(), usage: None, fail_with: statuses.to_vec() });
        self
    }

    /// Loads `{"default": "...", "responses": {"tag": "text" | {"text", "usage", "fail_with"}}}`.
    pub fn from_file(path: &Path, fallback_default: &str) -> Result<StubTransport, StubError> {
        let text = fs::read_to_string(path).map_err(|source| StubError::Io { path: path.display().to_string(), source })?;
        let file: StubFile =
            serde_json::from_str(&text).map_err(|source| StubError::Malformed { path: path.display().to_string(), source })?;
        Ok(StubTransport {
            default: file.default.unwrap_or_else(|| fallback_default.to_string()),
            responses: file.responses,
            served: Mutex::new(HashMap::new()),
        })
    }
}

impl Transport for StubTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportError> {
        let n = {
            let mut served = self.served.lock().expect("stub counter poisoned");
            let n = served.entry(request.tag.clone()).or_insert(0);
            *n += 1;
            *n - 1
        };
        let (text, usage) = match self.responses.get(&request.tag) {
            None => (self.default.as_str(), None),
            Some(StubEntry::Text(t)) => (t.as_str(), None),
            Some(StubEntry::Full { text, usage, fail_with }) => {
                if let Some(status) = fail_with.get(n) {
                    return Err(TransportError::Http { status: *status, body: "stub failure".into() });
                }
                (text.as_str(), *usage)
            }
        };
        let usage = usage.unwrap_or_else(|| Usage {
            input_tokens: estimate_tokens(&request.system) + estimate_tokens(&request.user),
            output_tokens: estimate_tokens(text),
        });
        Ok(TransportReply { text: text.to_string(), usage, latency_ms: 0, from_fixture: false })
    }
}

/// Live HTTPS transport. The endpoint is the full chat URL for the model.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<HttpTransport, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Transport(format!("building HTTP client: {e}")))?;
        Ok(HttpTransport { client })
    }
}

fn excerpt(body: &str) -> String {
    let mut out: String = body.chars().take(BODY_EXCERPT_CHARS).collect();
    if body.chars().count() > BODY_EXCERPT_CHARS {
        out.push_str("...");
    }
    out
}

fn map_reqwest(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else if e.is_connect() || e.is_request() || e.is_body() {
        TransportError::Connection(e.to_string())
    } else {
        TransportError::Other(e.to_string())
    }
}

fn parse_reply(dialect: Dialect, body: &Value) -> Option<(String, Usage)> {
    let u = |k: &str| body.pointer(k).and_then(Value::as_u64).unwrap_or(0);
    match dialect {
        Dialect::Openai => {
            let text = body.pointer("/choices/0/message/content")?.as_str()?.to_string();
            Some((text, Usage { input_tokens: u("/usage/prompt_tokens"), output_tokens: u("/usage/completion_tokens") }))
        }
        Dialect::Anthropic => {
            let text = body
                .get("content")?
                .as_array()?
                .iter()
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("");
            Some((text, Usage { input_tokens: u("/usage/input_tokens"), output_tokens: u("/usage/output_tokens") }))
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportError> {
        let spec = &request.spec;
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| TransportError::Other(format!("no endpoint configured for {}", spec.model_name)))?;
        let key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| TransportError::AuthMissing(var.clone()))?),
            None => None,
        };
        let body = match spec.dialect {
            Dialect::Openai => json!({
                "model": spec.model_name,
                "messages": [
                    {"role": "system", "content": request.system},
                    {"role": "user", "content": request.user},
                ],
                "temperature": request.temperature,
                "max_tokens": spec.max_output_tokens,
            }),
            Dialect::Anthropic => json!({
                "model": spec.model_name,
                "system": request.system,
                "messages": [{"role": "user", "content": request.user}],
                "temperature": request.temperature,
                "max_tokens": spec.max_output_tokens,
            }),
        };
        let mut builder = self
            .client
            .post(endpoint)
            .timeout(Duration::from_secs_f64(spec.request_timeout_secs))
            .json(&body);
        if let Some(key) = key {
            builder = match spec.dialect {
                Dialect::Openai => builder.bearer_auth(key),
                Dialect::Anthropic => builder.header("x-api-key", key).header("anthropic-version", "2023-06-01"),
            };
        }
        let started = Instant::now();
        let response = builder.send().map_err(map_reqwest)?;
        let status = response.status();
        let text = response.text().map_err(map_reqwest)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if !status.is_success() {
            return Err(TransportError::Http { status: status.as_u16(), body: excerpt(&text) });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| TransportError::Other(format!("provider returned non-JSON body: {e}")))?;
        let (text, usage) = parse_reply(spec.dialect, &value)
            .ok_or_else(|| TransportError::Other(format!("unrecognised provider response: {}", excerpt(&text))))?;
        Ok(TransportReply { text, usage, latency_ms, from_fixture: false })
    }

    fn is_network(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ContextBudget;

    fn pair() -> PromptPair {
        PromptPair::new("sys".into(), "user".into(), "v1", ContextBudget::default())
    }

    #[test]
    fn cost_examples() {
        let spec = ModelSpec { input_price_per_1m: 1.0, ..ModelSpec::named("m") };
        assert_eq!(cost_of(Usage::default(), &spec), Cost::ZERO);
        let c = cost_of(Usage { input_tokens: 1_000_000, output_tokens: 0 }, &spec);
        assert_eq!(c.nanos(), 1_000_000_000);
        assert_eq!(c.to_string(), "1.000000");
        assert_eq!(format!("{c:.2}"), "1.00");
    }

    #[test]
    fn cost_serializes_as_dollars() {
        let c = Cost::from_micros(530_000);
        assert_eq!(serde_json::to_string(&c).unwrap(), "0.53");
        assert_eq!(serde_json::from_str::<Cost>("0.53").unwrap(), c);
    }

    #[test]
    fn temperature_substitution() {
        let spec = ModelSpec { supports_temperature_zero: false, ..ModelSpec::named("gemini") };
        let (t, diag) = spec.effective_temperature();
        assert_eq!(t, 1.0);
        assert!(diag.unwrap().contains("effective temperature 1.0"));
        assert_eq!(ModelSpec::named("m").effective_temperature(), (0.0, None));

        let gw = Gateway::new(Arc::new(StubTransport::new("[]")));
        let c = gw.complete(&spec, &pair(), "t").unwrap();
        assert!(c.diagnostics.iter().any(|d| d.contains("effective temperature 1.0")));
    }

    #[test]
    fn stub_is_deterministic() {
        let gw = Gateway::new(Arc::new(StubTransport::new("[]").with_response("a", "[1]")));
        let spec = ModelSpec::named("m");
        let first = gw.complete(&spec, &pair(), "a").unwrap();
        let second = gw.complete(&spec, &pair(), "a").unwrap();
        assert_eq!(first, second);
        assert_eq!(first.text, "[1]");
        assert_eq!(gw.complete(&spec, &pair(), "other").unwrap().text, "[]");
        assert_eq!(gw.call_count(), 3);
        assert_eq!(gw.network_count(), 0);
    }

    #[test]
    fn transient_failures_are_retried() {
        let stub = StubTransport::new("[]").with_failures("t", "ok", &[500, 500]);
        let gw = Gateway::new(Arc::new(stub)).with_retry(RetryPolicy::immediate());
        let c = gw.complete(&ModelSpec::named("m"), &pair(), "t").unwrap();
        assert_eq!(c.text, "ok");
        assert_eq!(c.retry_count, 2);
        assert_eq!(gw.attempt_count(), 3);
        assert_eq!(gw.call_count(), 1);
    }

    #[test]
    fn retries_exhausted_and_permanent_errors() {
        let stub = StubTransport::new("[]").with_failures("t", "ok", &[503, 503, 503]).with_failures("p", "ok", &[400]);
        let gw = Gateway::new(Arc::new(stub)).with_retry(RetryPolicy::immediate());
        let spec = ModelSpec { max_retries: 2, ..ModelSpec::named("m") };
        assert!(matches!(gw.complete(&spec, &pair(), "t"), Err(GatewayError::RetriesExhausted { attempts: 3, .. })));
        assert!(matches!(gw.complete(&spec, &pair(), "p"), Err(GatewayError::ProviderError { status: 400, .. })));
    }

    #[test]
    fn transient_classification() {
        assert!(TransportError::Timeout.is_transient());
        assert!(TransportError::Http { status: 429, body: String::new() }.is_transient());
        assert!(TransportError::Http { status: 502, body: String::new() }.is_transient());
        assert!(!TransportError::Http { status: 401, body: String::new() }.is_transient());
        assert!(!TransportError::AuthMissing("K".into()).is_transient());
    }

    #[test]
    fn backoff_doubles_within_jitter() {
        let p = RetryPolicy::default();
        for attempt in 0..4 {
            let d = p.delay(attempt).as_secs_f64();
            let nominal = 2f64.powi(attempt as i32);
            assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9, "{d}");
        }
    }

    #[test]
    fn fixture_round_trip_miss_and_corrupt() {
        let tmp = tempfile::TempDir::new().unwrap();
        let store = FixtureStore::new(tmp.path());
        let c = Completion {
            text: "[]".into(),
            usage: Usage { input_tokens: 10, output_tokens: 2 },
            backend_latency_ms: 5,
            from_fixture: false,
            retry_count: 0,
            diagnostics: vec![],
        };
        store.record("k1", &c).unwrap();
        assert_eq!(store.replay("k1").unwrap(), Some(c));
        assert_eq!(store.replay("nope").unwrap(), None);
        fs::write(tmp.path().join("k2.json"), "{ not json").unwrap();
        assert!(matches!(store.replay("k2"), Err(GatewayError::FixtureCorrupt { .. })));
    }

    #[test]
    fn record_then_replay_through_gateway() {
        let tmp = tempfile::TempDir::new().unwrap();
        let store = FixtureStore::new(tmp.path());
        let spec = ModelSpec::named("m");
        let live = Gateway::new(Arc::new(StubTransport::new("[\"x\"]"))).recording_to(store.clone());
        let recorded = live.complete(&spec, &pair(), "t").unwrap();
        let replay = Gateway::new(Arc::new(ReplayTransport::new(store)));
        let replayed = replay.complete(&spec, &pair(), "t").unwrap();
        assert_eq!(replayed.text, recorded.text);
        assert_eq!(replayed.usage, recorded.usage);
        assert!(replayed.from_fixture);
        let other = PromptPair::new("sys".into(), "different".into(), "v1", ContextBudget::default());
        assert!(matches!(replay.complete(&spec, &other, "t"), Err(GatewayError::FixtureMiss { .. })));
        assert_eq!(replay.network_count(), 0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let gw = Gateway::new(Arc::new(StubTransport::new("[]")));
        let spec = ModelSpec { max_output_tokens: 0, ..ModelSpec::named("m") };
        assert!(matches!(gw.complete(&spec, &pair(), "t"), Err(GatewayError::InvalidSpec(_))));
        let spec = ModelSpec { input_price_per_1m: -1.0, ..ModelSpec::named("m") };
        assert!(spec.validate().is_err());
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn parse_reply_dialects() {
        let openai = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        assert_eq!(parse_reply(Dialect::Openai, &openai), Some(("hi".into(), Usage { input_tokens: 3, output_tokens: 1 })));
        let anthropic = json!({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}], "usage": {"input_tokens": 4, "output_tokens": 2}});
        assert_eq!(parse_reply(Dialect::Anthropic, &anthropic), Some(("ab".into(), Usage { input_tokens: 4, output_tokens: 2 })));
        assert_eq!(parse_reply(Dialect::Openai, &json!({})), None);
    }

    proptest::proptest! {
        #[test]
        fn cost_is_additive(a in 0u64..10_000_000, b in 0u64..10_000_000, c in 0u64..10_000_000, d in 0u64..10_000_000,
                            pin in 0.0f64..100.0, pout in 0.0f64..100.0) {
            let spec = ModelSpec { input_price_per_1m: pin, output_price_per_1m: pout, ..ModelSpec::named("m") };
            let u1 = Usage { input_tokens: a, output_tokens: b };
            let u2 = Usage { input_tokens: c, output_tokens: d };
            let whole = cost_of(u1 + u2, &spec).nanos() as i64;
            let parts = (cost_of(u1, &spec) + cost_of(u2, &spec)).nanos() as i64;
            proptest::prop_assert!((whole - parts).abs() <= 1);
        }
    }
}
