//! Chat-completion backends and the request digest they are keyed by.
//!
//! A [`ChatRequest`] canonicalizes to JSON with sorted keys; image parts are
//! replaced by the SHA-256 of the file bytes, so a digest is stable across
//! machines and directory layouts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

use super::prompts::{ChatMessage, ChatPart, MessageRole};
use super::transcript::{Transcript, TranscriptEntry};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend returned http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no transcript entry for request digest {digest}")]
    TranscriptMiss { digest: String },
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed backend response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures are the only retryable class.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub mode: DecodingMode,
    /// Ignored under greedy decoding.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_budget: Option<u32>,
}

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

impl DecodingParams {
    /// Self-hosted open-weight models.
    pub fn greedy() -> Self {
        Self {
            mode: DecodingMode::Greedy,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            thinking_budget: None,
        }
    }

    /// Hosted API models: temperature 0.0.
    pub fn api() -> Self {
        Self {
            mode: DecodingMode::Sampled,
            ..Self::greedy()
        }
    }

    pub fn with_thinking_budget(mut self, budget: u32) -> Self {
        self.thinking_budget = Some(budget);
        self
    }

    /// Temperature actually sent on the wire.
    pub fn effective_temperature(&self) -> f64 {
        match self.mode {
            DecodingMode::Greedy => 0.0,
            DecodingMode::Sampled => self.temperature,
        }
    }
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self::greedy()
    }
}

/// Which agent issued a request; recorded alongside each transcript entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Analyzer,
    Verifier,
    Summarizer,
    Refiner,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Analyzer => "analyzer",
            AgentRole::Verifier => "verifier",
            AgentRole::Summarizer => "summarizer",
            AgentRole::Refiner => "refiner",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn read_image(path: &Path) -> Result<Vec<u8>, BackendError> {
    fs::read(path).map_err(|source| BackendError::Image {
        path: path.to_path_buf(),
        source,
    })
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, decoding: DecodingParams) -> Self {
        Self {
            model: model.into(),
            messages,
            decoding,
        }
    }

    /// Location-independent JSON form. Keys are sorted (serde_json's default map).
    pub fn canonical(&self) -> Result<Value, BackendError> {
        let mut messages = Vec::with_capacity(self.messages.len());
        for m in &self.messages {
            let mut parts = Vec::with_capacity(m.parts.len());
            for p in &m.parts {
                parts.push(match p {
                    ChatPart::Text(t) => json!({ "text": t }),
                    ChatPart::Image(path) => json!({ "image_sha256": sha256_hex(&read_image(path)?) }),
                });
            }
            let role = match m.role {
                MessageRole::System => "system",
                MessageRole::User => "user",
            };
            messages.push(json!({ "role": role, "parts": parts }));
        }
        Ok(json!({
            "model": self.model,
            "messages": messages,
            "decoding": {
                "mode": self.decoding.mode,
                "temperature": self.decoding.effective_temperature(),
                "max_tokens": self.decoding.max_tokens,
                "thinking_budget": self.decoding.thinking_budget,
            },
        }))
    }

    pub fn digest_of(canonical: &Value) -> String {
        sha256_hex(canonical.to_string().as_bytes())
    }

    pub fn digest(&self) -> Result<String, BackendError> {
        Ok(Self::digest_of(&self.canonical()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Set by backends that know the latency themselves (replay); others
    /// are timed by [`chat_complete`].
    pub latency_ms: Option<f64>,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

/// Send one message through `backend`, timing it and appending the exchange
/// to `transcript`.
pub fn chat_complete(
    backend: &dyn ChatBackend,
    role: AgentRole,
    message: ChatMessage,
    params: &DecodingParams,
    transcript: &Transcript,
) -> Result<Completion, BackendError> {
    let request = ChatRequest::new(backend.model_id(), vec![message], params.clone());
    let canonical = request.canonical()?;
    let digest = ChatRequest::digest_of(&canonical);
    let started = Instant::now();
    let completion = backend.complete(&request)?;
    let latency_ms = completion
        .latency_ms
        .unwrap_or_else(|| started.elapsed().as_secs_f64() * 1e3);
    debug!(backend = backend.name(), role = role.as_str(), %digest, latency_ms, "chat completion");
    transcript.append(TranscriptEntry {
        digest,
        response: completion.text.clone(),
        latency_ms,
        role: Some(role),
        request: Some(canonical),
    });
    Ok(Completion {
        text: completion.text,
        latency_ms: Some(latency_ms),
    })
}

/// Replays recorded responses by request digest.
pub struct ScriptedBackend {
    name: String,
    model_id: String,
    entries: std::collections::HashMap<String, (String, f64)>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, model_id: impl Into<String>, entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map = std::collections::HashMap::new();
        for e in entries {
            map.entry(e.digest).or_insert((e.response, e.latency_ms));
        }
        Self {
            name: name.into(),
            model_id: model_id.into(),
            entries: map,
        }
    }

    pub fn load(name: impl Into<String>, model_id: impl Into<String>, path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(name, model_id, Transcript::load_entries(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let digest = request.digest()?;
        match self.entries.get(&digest) {
            Some((text, latency)) => Ok(Completion {
                text: text.clone(),
                latency_ms: Some(*latency),
            }),
            None => Err(BackendError::TranscriptMiss { digest }),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Answers with a closure, optionally sleeping first to simulate inference
/// time. Used to script runs that are then recorded for replay.
#[derive(Clone)]
pub struct FnBackend {
    name: String,
    model_id: String,
    delay: Option<Duration>,
    respond: Arc<Responder>,
}

impl FnBackend {
    pub fn new(
        name: impl Into<String>,
        model_id: impl Into<String>,
        respond: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            model_id: model_id.into(),
            delay: None,
            respond: Arc::new(respond),
        }
    }

    /// Always answer `text`.
    pub fn constant(name: impl Into<String>, model_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(name, model_id, move |_| Ok(text.clone()))
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }
}

impl ChatBackend for FnBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
        Ok(Completion {
            text: (self.respond)(request)?,
            latency_ms: None,
        })
    }
}

/// OpenAI-compatible `/chat/completions` client with mixed text and
/// base64 image parts.
pub struct HttpChatBackend {
    name: String,
    model_id: String,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    attempts: u32,
    backoff: Duration,
}

pub const DEFAULT_ATTEMPTS: u32 = 3;

impl HttpChatBackend {
    pub fn new(
        name: impl Into<String>,
        base_url: &str,
        model_id: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: name.into(),
            model_id: model_id.into(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent,
            attempts: DEFAULT_ATTEMPTS,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    /// Request body in the chat-completions wire format.
    pub fn wire_body(request: &ChatRequest) -> Result<Value, BackendError> {
        let mut messages = Vec::new();
        for m in &request.messages {
            let mut content = Vec::new();
            for p in &m.parts {
                content.push(match p {
                    ChatPart::Text(t) => json!({ "type": "text", "text": t }),
                    ChatPart::Image(path) => {
                        let data = base64::engine::general_purpose::STANDARD.encode(read_image(path)?);
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{};base64,{data}", mime_for(path)) },
                        })
                    }
                });
            }
            let role = match m.role {
                MessageRole::System => "system",
                MessageRole::User => "user",
            };
            messages.push(json!({ "role": role, "content": content }));
        }
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.decoding.effective_temperature(),
            "max_tokens": request.decoding.max_tokens,
        });
        if let Some(budget) = request.decoding.thinking_budget {
            body["extra_body"] = json!({ "google": { "thinking_config": { "thinking_budget": budget } } });
        }
        Ok(body)
    }

    fn send_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        extract_content(&v)
    }
}

fn extract_content(v: &Value) -> Result<String, BackendError> {
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::Protocol("missing choices[0].message.content".into())),
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let body = Self::wire_body(request)?;
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.send_once(&body) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        latency_ms: None,
                    })
                }
                Err(e) if e.is_transport() && attempt < self.attempts => {
                    warn!(backend = %self.name, attempt, error = %e, "retrying after transport error");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
