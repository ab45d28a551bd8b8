//! Chat-completion backends.
//!
//! [`ChatBackend`] is the single seam between the pipeline and a model
//! provider. Two implementations ship here:
//! - [`OpenAiBackend`]: blocking HTTP client for any endpoint that speaks the
//!   OpenAI-compatible `/chat/completions` shape.
//! - [`MockBackend`]: replays a [`MockScript`] keyed by
//!   `(stage, role kind, round)` so whole runs are reproducible offline.
//!
//! [`complete`] wraps a backend with the retry policy, token accounting and
//! latency measurement against an injectable [`Clock`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RoleKind, Stage};

pub const API_KEY_ENV: &str = "DEVAGENTS_API_KEY";
pub const BASE_URL_ENV: &str = "DEVAGENTS_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

/// Whitespace-token estimate shared by mock usage accounting and context
/// budgeting.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }
}

/// Which agent call a request belongs to. Scripted backends key on it; the
/// HTTP backend ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallTag {
    pub stage: Stage,
    pub kind: RoleKind,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: Option<CallTag>,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: CallTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self.messages.first().ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
        if first.role == ChatRole::Assistant {
            return Err(LlmError::InvalidRequest("first message must be system or user".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} is not a non-negative number",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    fn prompt_token_estimate(&self) -> u64 {
        self.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |acc, u| acc + u)
    }
}

/// What a backend hands back for one attempt. `usage` is `None` when the
/// provider did not report it; [`complete`] then falls back to the estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub content: String,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    /// Retryable: network failure, HTTP 429 or 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend exhausted after {attempts} attempts: {last_error}")]
    BackendExhausted { attempts: u32, last_error: String },
    #[error("credential rejected: {0}")]
    AuthRejected(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no scripted response for {stage} {kind} round {round}")]
    MissingScriptEntry { stage: Stage, kind: RoleKind, round: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transient(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
        (**self).send(request)
    }
}

/// Time source. `now` is measured from the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Deterministic clock. Reads return the current instant and then advance it
/// by `step`; `sleep` advances it without blocking.
#[derive(Debug)]
pub struct ManualClock {
    now: Mutex<Duration>,
    step: Duration,
}

impl ManualClock {
    pub fn fixed(at: Duration) -> Self {
        Self::stepping(at, Duration::ZERO)
    }

    pub fn stepping(start: Duration, step: Duration) -> Self {
        Self { now: Mutex::new(start), step }
    }

    pub fn slept_until(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        let mut now = self.now.lock().expect("clock lock");
        let current = *now;
        *now += self.step;
        current
    }

    fn sleep(&self, duration: Duration) {
        *self.now.lock().expect("clock lock") += duration;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base: Duration::from_millis(500), backoff_multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self { max_attempts: 1, ..Self::default() }
    }

    /// Delay before retry number `retry` (1-based). Non-decreasing in `retry`.
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        let multiplier = self.backoff_multiplier.max(1.0);
        let exponent = retry.saturating_sub(1).min(32) as i32;
        let secs = self.backoff_base.as_secs_f64() * multiplier.powi(exponent);
        Duration::try_from_secs_f64(secs).unwrap_or(Duration::MAX)
    }
}

/// Sends `request` through `backend`, retrying transient failures.
///
/// Latency covers every attempt and every backoff sleep, read from `clock`.
pub fn complete(
    request: &CompletionRequest,
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
    clock: &dyn Clock,
) -> Result<CompletionResponse, LlmError> {
    request.validate()?;
    let max_attempts = policy.max_attempts.max(1);
    let started = clock.now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.send(request) {
            Ok(raw) => {
                let usage = raw.usage.unwrap_or_else(|| TokenUsage {
                    prompt_tokens: request.prompt_token_estimate(),
                    completion_tokens: estimate_tokens(&raw.content),
                });
                let latency = clock.now().saturating_sub(started);
                return Ok(CompletionResponse { content: raw.content, usage, latency, attempts: attempt });
            }
            Err(err) if err.is_transient() => {
                if attempt >= max_attempts {
                    return Err(LlmError::BackendExhausted { attempts: attempt, last_error: err.to_string() });
                }
                clock.sleep(policy.delay_before_retry(attempt));
            }
            Err(err) => return Err(err),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScriptKey {
    pub stage: Stage,
    pub kind: RoleKind,
    pub round: u32,
}

impl ScriptKey {
    pub fn new(stage: Stage, kind: RoleKind, round: u32) -> Self {
        Self { stage, kind, round }
    }
}

impl From<CallTag> for ScriptKey {
    fn from(tag: CallTag) -> Self {
        Self::new(tag.stage, tag.kind, tag.round)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    pub entries: BTreeMap<ScriptKey, String>,
    pub default_response: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
    #[serde(default, rename = "entry")]
    entries: Vec<ScriptFileEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScriptFileEntry {
    stage: Stage,
    kind: RoleKind,
    round: u32,
    response: String,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn insert(&mut self, stage: Stage, kind: RoleKind, round: u32, response: impl Into<String>) {
        self.entries.insert(ScriptKey::new(stage, kind, round), response.into());
    }

    pub fn with(mut self, stage: Stage, kind: RoleKind, round: u32, response: impl Into<String>) -> Self {
        self.insert(stage, kind, round, response);
        self
    }

    pub fn lookup(&self, key: ScriptKey) -> Result<&str, LlmError> {
        self.entries
            .get(&key)
            .or(self.default_response.as_ref())
            .map(String::as_str)
            .ok_or(LlmError::MissingScriptEntry { stage: key.stage, kind: key.kind, round: key.round })
    }

    /// Parses the TOML script format:
    ///
    /// ```toml
    /// default = "VERDICT: APPROVE"
    ///
    /// [[entry]]
    /// stage = "requirements"
    /// kind = "producer"
    /// round = 0
    /// response = '''FR-1: ...'''
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| LlmError::Config(format!("mock script: {e}")))?;
        let mut script = MockScript { default_response: file.default, ..Self::default() };
        for entry in file.entries {
            let key = ScriptKey::new(entry.stage, entry.kind, entry.round);
            if script.entries.insert(key, entry.response).is_some() {
                return Err(LlmError::Config(format!(
                    "mock script: duplicate entry for {} {} round {}",
                    key.stage, key.kind, key.round
                )));
            }
        }
        Ok(script)
    }

    pub fn to_toml(&self) -> String {
        let file = ScriptFile {
            default: self.default_response.clone(),
            entries: self
                .entries
                .iter()
                .map(|(key, response)| ScriptFileEntry {
                    stage: key.stage,
                    kind: key.kind,
                    round: key.round,
                    response: response.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("script serializes")
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Free-function form of [`MockScript::lookup`].
pub fn mock_lookup(script: &MockScript, key: ScriptKey) -> Result<&str, LlmError> {
    script.lookup(key)
}

/// Scripted backend. Usage is left to the whitespace estimator so manifests
/// stay reproducible.
#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
        let tag = request.tag.ok_or_else(|| LlmError::InvalidRequest("mock backend needs a call tag".into()))?;
        let content = self.script.lookup(tag.into())?.to_string();
        Ok(RawCompletion { content, usage: None })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Blocking client for OpenAI-compatible chat-completion endpoints.
pub struct OpenAiBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiBackend").field("base_url", &self.base_url).field("api_key", &"<redacted>").finish()
    }
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key: api_key.into(), client })
    }

    /// Reads the credential from `DEVAGENTS_API_KEY` and the endpoint from
    /// `DEVAGENTS_BASE_URL` (default: the public OpenAI endpoint).
    pub fn from_env() -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base_url = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Self::new(base_url, api_key, Duration::from_secs(300))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl ChatBackend for OpenAiBackend {
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let response = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transient(e.without_url().to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| LlmError::Transient(e.without_url().to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::AuthRejected(format!("HTTP {status}"))),
            429 | 500..=599 => return Err(LlmError::Transient(format!("HTTP {status}"))),
            _ => return Err(LlmError::Rejected { status, body: text.chars().take(512).collect() }),
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))?;
        Ok(RawCompletion {
            content,
            usage: wire
                .usage
                .map(|u| TokenUsage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens }),
        })
    }
}

pub(crate) mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis().min(u128::from(u64::MAX)) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}
