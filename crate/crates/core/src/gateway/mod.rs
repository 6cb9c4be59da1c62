//! Provider-agnostic chat completion with live, record and replay transports.
//!
//! Every request has a stable digest computed over a canonical serialization
//! that leaves out the free-form metadata. Record mode stores
//! `(digest -> response)` pairs in a fixture directory; replay mode answers
//! purely from that directory so sessions re-run offline and byte-identically.

mod fixtures;
mod http;
pub mod simulated;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use fixtures::{FixtureRecord, FixtureStore};
pub use http::{sniff_media_type, HttpProvider};
pub use simulated::SimulatedProvider;

pub const ENV_ENDPOINT: &str = "MENTOR_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "MENTOR_LLM_MODEL";
pub const ENV_API_KEY: &str = "MENTOR_LLM_API_KEY";
pub const ENV_VISION: &str = "MENTOR_LLM_VISION";

/// Endpoint value selecting the built-in offline provider.
pub const SIMULATED_ENDPOINT: &str = "simulated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
    /// Content-addressed image references (`sha256:<hex>`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_refs: Vec<String>,
}

impl ChatMessage {
    pub fn new(role: MessageRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            image_refs: Vec::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(MessageRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(MessageRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(MessageRole::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Session id, phase, purpose and similar tags. Not part of the digest.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            model_id: model_id.into(),
            temperature: 0.7,
            max_tokens: 1024,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        let first_system = self.messages.iter().position(|m| m.role == MessageRole::System);
        let first_assistant = self
            .messages
            .iter()
            .position(|m| m.role == MessageRole::Assistant);
        if let (Some(sys), Some(asst)) = (first_system, first_assistant) {
            if sys > asst {
                return Err(GatewayError::InvalidRequest(
                    "system message must precede assistant messages".into(),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, metadata excluded.
    pub fn canonical_value(&self) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = self
            .messages
            .iter()
            .map(|m| {
                serde_json::json!({
                    "content": m.content,
                    "image_refs": m.image_refs,
                    "role": m.role,
                })
            })
            .collect();
        serde_json::json!({
            "max_tokens": self.max_tokens,
            "messages": messages,
            "model_id": self.model_id,
            "temperature": self.temperature,
        })
    }

    pub fn canonical_string(&self) -> String {
        self.canonical_value().to_string()
    }
}

/// Hex SHA-256 over the canonical request serialization.
pub fn digest(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(request.canonical_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Live,
    Record,
    Replay,
}

impl FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(TransportMode::Live),
            "record" => Ok(TransportMode::Record),
            "replay" => Ok(TransportMode::Replay),
            other => Err(format!("unknown transport `{other}` (live|record|replay)")),
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportMode::Live => "live",
            TransportMode::Record => "record",
            TransportMode::Replay => "replay",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("network error: {message}")]
    Network { message: String, retryable: bool },
    #[error("no fixture recorded for request {0}")]
    MissingFixture(String),
    #[error("provider returned {status}: {excerpt}")]
    Provider { status: u16, excerpt: String },
    #[error("provider timed out")]
    Timeout,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error("gateway misconfigured: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn retryable(&self) -> bool {
        match self {
            GatewayError::Network { retryable, .. } => *retryable,
            GatewayError::Timeout => true,
            GatewayError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Something that turns chat requests into responses.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn supports_vision(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            initial_backoff: Duration::ZERO,
        }
    }
}

/// The handle every higher layer talks to.
#[derive(Clone)]
pub struct Gateway {
    mode: TransportMode,
    provider: Option<Arc<dyn ChatProvider>>,
    fixtures: Option<FixtureStore>,
    retry: RetryPolicy,
    model_id: String,
    vision: bool,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("model_id", &self.model_id)
            .field("fixtures", &self.fixtures.as_ref().map(|s| s.dir().to_path_buf()))
            .finish()
    }
}

impl Gateway {
    pub fn live(provider: Arc<dyn ChatProvider>, model_id: impl Into<String>) -> Self {
        let vision = provider.supports_vision();
        Gateway {
            mode: TransportMode::Live,
            provider: Some(provider),
            fixtures: None,
            retry: RetryPolicy::default(),
            model_id: model_id.into(),
            vision,
        }
    }

    pub fn record(
        provider: Arc<dyn ChatProvider>,
        model_id: impl Into<String>,
        fixtures: FixtureStore,
    ) -> Self {
        let mut g = Gateway::live(provider, model_id);
        g.mode = TransportMode::Record;
        g.fixtures = Some(fixtures);
        g
    }

    pub fn replay(fixtures: FixtureStore, model_id: impl Into<String>) -> Self {
        Gateway {
            mode: TransportMode::Replay,
            provider: None,
            fixtures: Some(fixtures),
            retry: RetryPolicy::none(),
            model_id: model_id.into(),
            vision: true,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_vision(mut self, vision: bool) -> Self {
        self.vision = vision;
        self
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn supports_vision(&self) -> bool {
        self.vision
    }

    pub fn fixtures(&self) -> Option<&FixtureStore> {
        self.fixtures.as_ref()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        match self.mode {
            TransportMode::Replay => {
                let store = self
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("replay requires a fixture store".into()))?;
                let key = digest(request);
                store
                    .load(&key)?
                    .map(|rec| rec.response)
                    .ok_or(GatewayError::MissingFixture(key))
            }
            TransportMode::Live | TransportMode::Record => {
                let response = self.call_with_retry(request)?;
                if self.mode == TransportMode::Record {
                    if let Some(store) = &self.fixtures {
                        store.save(request, &response)?;
                    }
                }
                Ok(response)
            }
        }
    }

    fn call_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| GatewayError::Config("no provider configured".into()))?;
        let mut attempt = 0;
        loop {
            match provider.complete(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() && attempt < self.retry.max_retries => {
                    let wait = self.retry.initial_backoff * 2u32.pow(attempt);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Builds a gateway from `MENTOR_LLM_*` environment variables.
///
/// `MENTOR_LLM_ENDPOINT=simulated` selects the built-in offline provider.
/// Replay needs no endpoint; its model id comes from `MENTOR_LLM_MODEL` or the
/// fixture directory's manifest.
pub fn gateway_from_env(
    mode: TransportMode,
    fixtures: Option<FixtureStore>,
    blob_dir: Option<std::path::PathBuf>,
) -> Result<Gateway, GatewayError> {
    let env = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
    let vision = env(ENV_VISION).map(|v| v != "0" && v != "false").unwrap_or(true);
    if mode == TransportMode::Replay {
        let store = fixtures.ok_or_else(|| GatewayError::Config("replay requires a fixture store".into()))?;
        let model = env(ENV_MODEL)
            .or_else(|| store.model_id())
            .unwrap_or_else(|| simulated::SIMULATED_MODEL.to_string());
        return Ok(Gateway::replay(store, model).with_vision(vision));
    }
    let endpoint = env(ENV_ENDPOINT).ok_or_else(|| GatewayError::Config(format!("{ENV_ENDPOINT} is not set")))?;
    let (provider, model): (Arc<dyn ChatProvider>, String) = if endpoint == SIMULATED_ENDPOINT {
        let model = env(ENV_MODEL).unwrap_or_else(|| simulated::SIMULATED_MODEL.to_string());
        (Arc::new(SimulatedProvider::new()), model)
    } else {
        let key = env(ENV_API_KEY).ok_or_else(|| GatewayError::Config(format!("{ENV_API_KEY} is not set")))?;
        let model = env(ENV_MODEL).ok_or_else(|| GatewayError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut http = HttpProvider::new(endpoint, model.clone(), Some(key)).with_vision(vision);
        if let Some(dir) = blob_dir {
            http = http.with_blob_dir(dir);
        }
        (Arc::new(http), model)
    };
    let gw = match mode {
        TransportMode::Record => {
            let store = fixtures.ok_or_else(|| GatewayError::Config("record requires a fixture store".into()))?;
            Gateway::record(provider, model, store)
        }
        _ => Gateway::live(provider, model),
    };
    Ok(gw.with_vision(vision))
}

/// Adapts a closure into a provider.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.0)(request)
    }
}

/// Answers from a fixed queue; handy for unit tests that script a model.
pub struct QueueProvider {
    responses: std::sync::Mutex<std::collections::VecDeque<Result<ChatResponse, GatewayError>>>,
    seen: std::sync::Mutex<Vec<ChatRequest>>,
}

impl QueueProvider {
    pub fn new<I>(responses: I) -> Self
    where
        I: IntoIterator<Item = Result<ChatResponse, GatewayError>>,
    {
        QueueProvider {
            responses: std::sync::Mutex::new(responses.into_iter().collect()),
            seen: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn texts<S: Into<String>, I: IntoIterator<Item = S>>(texts: I) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(ChatResponse::stop(t))))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatProvider for QueueProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.seen.lock().unwrap().push(request.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(GatewayError::Network {
                message: "queue exhausted".into(),
                retryable: false,
            }))
    }
}
