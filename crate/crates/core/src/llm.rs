//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `chat/completions` wire
//! format. [`ScriptedBackend`] answers from a reply table and is a pure
//! function of the request, which makes whole simulations reproducible
//! offline. [`RecordingBackend`] wraps either and captures every request.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    Decode(String),
    #[error("no scripted reply matches request {0}")]
    NoScriptedReply(String),
    #[error("missing API key: environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("reply table line {line}: {message}")]
    ReplyTable { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn for_task(task: Task, messages: Vec<ChatMessage>) -> Self {
        let (temperature, seed) = default_params(task);
        Self { messages, temperature, seed, max_tokens: None }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined by blank lines.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    /// Stable content hash over roles, contents and seed.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(match m.role {
                Role::System => b"s",
                Role::User => b"u",
                Role::Assistant => b"a",
            });
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        h.update(self.seed.to_le_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// Informational only (model name, latency, token counts).
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    QueryGeneration,
    RelevanceJudgment,
    Summarization,
}

/// Sampling parameters per task: creative query generation at temperature
/// 1.0, deterministic judgments and summaries at 0, seed 0 throughout.
pub fn default_params(task: Task) -> (f64, u64) {
    match task {
        Task::QueryGeneration => (1.0, 0),
        Task::RelevanceJudgment | Task::Summarization => (0.0, 0),
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Cheap reachability check run before a campaign starts.
    fn probe(&self) -> Result<(), LlmError> {
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Free-function form of [`ChatBackend::complete`] that validates first.
pub fn complete(backend: &dyn ChatBackend, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
    request.validate()?;
    backend.complete(request)
}

// ---------------------------------------------------------------------------
// HTTP backend

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "BackendConfig::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "BackendConfig::default_retries")]
    pub retries: u32,
    #[serde(default = "BackendConfig::default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl BackendConfig {
    fn default_timeout() -> f64 {
        120.0
    }
    fn default_retries() -> u32 {
        3
    }
    fn default_backoff() -> u64 {
        500
    }

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: Self::default_timeout(),
            retries: Self::default_retries(),
            retry_backoff_ms: Self::default_backoff(),
            max_tokens: None,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(LlmError::InvalidRequest("timeout_secs must be > 0".into()));
        }
        if self.endpoint.is_empty() || self.model.is_empty() {
            return Err(LlmError::InvalidRequest("endpoint and model are required".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    seed: u64,
    n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    model: Option<String>,
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
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(String),
    Fail(LlmError),
}

pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, api_key, agent })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Attempt {
        let started = Instant::now();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(LlmError::Status { status, body: text });
        }
        match decode_response(&text) {
            Ok(mut r) => {
                r.meta.insert("latency_ms".into(), started.elapsed().as_millis().to_string());
                Attempt::Done(r)
            }
            Err(e) => Attempt::Fail(e),
        }
    }
}

fn decode_response(text: &str) -> Result<ChatResponse, LlmError> {
    let wire: WireResponse = serde_json::from_str(text).map_err(|e| LlmError::Decode(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Decode("response has no choices".into()))?;
    let mut meta = BTreeMap::new();
    if let Some(m) = wire.model {
        meta.insert("model".into(), m);
    }
    if let Some(u) = wire.usage {
        if let Some(p) = u.prompt_tokens {
            meta.insert("prompt_tokens".into(), p.to_string());
        }
        if let Some(c) = u.completion_tokens {
            meta.insert("completion_tokens".into(), c.to_string());
        }
    }
    Ok(ChatResponse { text: choice.message.content.unwrap_or_default(), meta })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = serde_json::to_string(&WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.temperature,
            seed: request.seed,
            n: 1,
            max_tokens: request.max_tokens.or(self.config.max_tokens),
            stop: &self.config.stop,
        })
        .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;

        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                log::warn!("retrying chat completion ({attempt}/{}): {last}", self.config.retries);
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(LlmError::Transport { attempts, message: last })
    }

    fn probe(&self) -> Result<(), LlmError> {
        let req = ChatRequest {
            messages: vec![ChatMessage::user("ping")],
            temperature: 0.0,
            seed: 0,
            max_tokens: Some(1),
        };
        self.complete(&req).map(|_| ())
    }

    fn describe(&self) -> String {
        format!("http:{}@{}", self.config.model, self.config.endpoint)
    }
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

/// One reply-table row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyRule {
    pub matcher: Matcher,
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// Matches when [`ChatRequest::fingerprint`] equals the hex digest.
    Fingerprint(String),
    /// Matches when every fragment occurs in the prompt text.
    Contains(Vec<String>),
    /// Matches everything.
    Any,
}

impl Matcher {
    fn matches(&self, request: &ChatRequest, prompt: &str) -> bool {
        match self {
            Matcher::Fingerprint(h) => *h == request.fingerprint(),
            Matcher::Contains(parts) => parts.iter().all(|p| prompt.contains(p.as_str())),
            Matcher::Any => true,
        }
    }
}

/// Ordered reply rules loaded from a plain-text table.
///
/// ```text
/// # comment
/// Task: relevance judgment && Document [SYN-003] => RELEVANT
/// hash:3f2a... => exact reply for one request
/// Task: write one new search query => first || second || third
/// * => fallback reply
/// ```
///
/// The key left of ` => ` is either `hash:<sha256>`, `*`, or fragments joined
/// by ` && ` that must all occur in the prompt. The first matching row wins.
/// Replies joined by ` || ` are alternatives: the first one that does not
/// already occur in the prompt is returned, else the last one. `\n`, `\t` and
/// `\\` are unescaped on both sides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplyTable {
    rules: Vec<ReplyRule>,
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t")
}

impl ReplyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once(" => ").ok_or_else(|| LlmError::ReplyTable {
                line: idx + 1,
                message: "expected `key => reply`".into(),
            })?;
            let key = key.trim();
            let matcher = if key == "*" {
                Matcher::Any
            } else if let Some(h) = key.strip_prefix("hash:") {
                Matcher::Fingerprint(h.trim().to_ascii_lowercase())
            } else {
                let parts: Vec<String> =
                    key.split(" && ").map(|p| unescape(p.trim())).filter(|p| !p.is_empty()).collect();
                if parts.is_empty() {
                    return Err(LlmError::ReplyTable { line: idx + 1, message: "empty key".into() });
                }
                Matcher::Contains(parts)
            };
            let replies = value.split(" || ").map(|r| unescape(r.trim())).collect();
            rules.push(ReplyRule { matcher, replies });
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[ReplyRule] {
        &self.rules
    }

    pub fn push(&mut self, matcher: Matcher, replies: Vec<String>) {
        self.rules.push(ReplyRule { matcher, replies });
    }

    /// Rules of `other` take precedence over the rules already present.
    pub fn prepend(&mut self, other: ReplyTable) {
        let mut rules = other.rules;
        rules.append(&mut self.rules);
        self.rules = rules;
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            let key = match &rule.matcher {
                Matcher::Any => "*".to_string(),
                Matcher::Fingerprint(h) => format!("hash:{h}"),
                Matcher::Contains(parts) => {
                    parts.iter().map(|p| escape(p)).collect::<Vec<_>>().join(" && ")
                }
            };
            let value = rule.replies.iter().map(|r| escape(r)).collect::<Vec<_>>().join(" || ");
            out.push_str(&format!("{key} => {value}\n"));
        }
        out
    }

    pub fn reply_for(&self, request: &ChatRequest) -> Option<&str> {
        let prompt = request.prompt_text();
        let rule = self.rules.iter().find(|r| r.matcher.matches(request, &prompt))?;
        rule.replies
            .iter()
            .find(|r| !prompt.contains(r.as_str()))
            .or_else(|| rule.replies.last())
            .map(String::as_str)
    }
}

/// Deterministic offline backend driven by a [`ReplyTable`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    table: ReplyTable,
}

impl ScriptedBackend {
    pub fn new(table: ReplyTable) -> Self {
        Self { table }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut table = ReplyTable::new();
        for (k, v) in pairs {
            table.push(Matcher::Contains(vec![k.to_string()]), vec![v.to_string()]);
        }
        Self { table }
    }

    pub fn table(&self) -> &ReplyTable {
        &self.table
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let text = self
            .table
            .reply_for(request)
            .ok_or_else(|| LlmError::NoScriptedReply(request.fingerprint()))?;
        let mut meta = BTreeMap::new();
        meta.insert("model".into(), "scripted".into());
        Ok(ChatResponse { text: text.to_string(), meta })
    }

    fn describe(&self) -> String {
        format!("scripted:{} rules", self.table.rules.len())
    }
}

/// Captures every request passed to the wrapped backend.
pub struct RecordingBackend<B> {
    inner: B,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, requests: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("recording lock poisoned").clone()
    }

    pub fn take(&self) -> Vec<ChatRequest> {
        std::mem::take(&mut *self.requests.lock().expect("recording lock poisoned"))
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.requests.lock().expect("recording lock poisoned").push(request.clone());
        self.inner.complete(request)
    }

    fn probe(&self) -> Result<(), LlmError> {
        self.inner.probe()
    }

    fn describe(&self) -> String {
        format!("recording({})", self.inner.describe())
    }
}
