//! Uniform access to chat-completion, embedding, and perplexity providers.
//!
//! Every call is routed by the profile's endpoint scheme: `http(s)://`
//! endpoints use the OpenAI-compatible wire client, `mock://` endpoints use
//! the deterministic built-in provider. A record/replay cache keyed by a
//! request digest makes runs hermetic: in strict-replay mode a cache miss is
//! an error, never a network call.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub mod http;
pub mod mock;
pub mod replay;

pub use replay::ReplayCache;

/// What a profile is used for in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderRole {
    Teacher,
    Student,
    Judge,
    StyleSummarizer,
    Embedder,
}

/// One configured model endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub id: String,
    pub endpoint: String,
    pub model_name: String,
    pub role: ProviderRole,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    /// Environment variable holding the API key, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Declared embedding dimension; responses are checked against it.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    /// Whether the provider can echo per-token log-probabilities.
    #[serde(default)]
    pub supports_logprobs: bool,
}

fn default_max_concurrent() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

impl ProviderProfile {
    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock://") || self.endpoint.starts_with("mock:")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// A chat-completion request; sampling fields mirror the wire contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub enable_thinking: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Single-user-message request with the given sampling parameters.
    pub fn user(text: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            top_p: 1.0,
            top_k: None,
            max_tokens: 4096,
            enable_thinking: false,
            seed: None,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p {} must be in (0, 1]",
                self.top_p
            )));
        }
        if self.top_k == Some(0) {
            return Err(GatewayError::InvalidRequest("top_k must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub perplexity: f64,
    pub target_token_count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),
    #[error("strict replay miss for digest {digest} ({kind})")]
    ReplayMiss { digest: String, kind: &'static str },
    #[error("replay cache error: {0}")]
    Cache(String),
    #[error("embedding dimension mismatch: declared {expected}, provider returned {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("profile `{0}` does not expose per-token log-probabilities")]
    LogprobsUnsupported(String),
    #[error("target has no scoreable tokens")]
    ZeroTokenTarget,
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("no provider backend for endpoint `{0}`")]
    NoBackend(String),
}

/// A provider implementation behind the gateway.
pub trait Backend: Send + Sync {
    fn chat(&self, profile: &ProviderProfile, req: &ChatRequest)
        -> Result<ChatResponse, GatewayError>;
    fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError>;
    fn perplexity(
        &self,
        profile: &ProviderProfile,
        context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Call providers directly; the cache is untouched.
    #[default]
    Off,
    /// Serve from the cache when primed, otherwise call and record.
    Record,
    /// Serve only from the cache; a miss is an error.
    Strict,
}

/// Counting semaphore used for the per-profile admission cap.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> SemaphoreGuard {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard {
            sem: Arc::clone(self),
        }
    }
}

struct SemaphoreGuard {
    sem: Arc<Semaphore>,
}

impl Drop for SemaphoreGuard {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().unwrap();
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

/// Thread-safe front door for all provider traffic.
pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ReplayCache>,
    mode: ReplayMode,
    limiters: Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl Gateway {
    /// Production router: mock endpoints to the deterministic provider,
    /// everything else to the OpenAI-compatible HTTP client.
    pub fn new(
        run_seed: u64,
        mode: ReplayMode,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, GatewayError> {
        let backend = Box::new(RouterBackend {
            mock: mock::DeterministicMock::new(run_seed),
            http: http::HttpBackend::new(),
        });
        Self::with_backend(backend, mode, cache_dir)
    }

    /// Inject a custom backend (tests, instrumentation).
    pub fn with_backend(
        backend: Box<dyn Backend>,
        mode: ReplayMode,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, GatewayError> {
        let cache = match (&mode, cache_dir) {
            (ReplayMode::Off, _) => None,
            (_, Some(dir)) => Some(ReplayCache::open(dir).map_err(GatewayError::Cache)?),
            (ReplayMode::Record, None) | (ReplayMode::Strict, None) => {
                return Err(GatewayError::Cache(
                    "record/strict replay requires a cache directory".into(),
                ))
            }
        };
        Ok(Gateway {
            backend,
            cache,
            mode,
            limiters: Mutex::new(HashMap::new()),
        })
    }

    fn limiter(&self, profile: &ProviderProfile) -> Arc<Semaphore> {
        let mut limiters = self.limiters.lock().unwrap();
        Arc::clone(
            limiters
                .entry(profile.id.clone())
                .or_insert_with(|| Arc::new(Semaphore::new(profile.max_concurrent))),
        )
    }

    pub fn chat_complete(
        &self,
        profile: &ProviderProfile,
        req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let digest = chat_digest(profile, req);
        self.cached_call("chat", &digest, || {
            let _permit = self.limiter(profile).acquire();
            self.backend.chat(profile, req)
        })
    }

    pub fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.is_empty() {
            return Err(GatewayError::InvalidRequest("embedding text must be non-empty".into()));
        }
        let digest = embed_digest(profile, text);
        let vector: Vec<f64> = self.cached_call("embed", &digest, || {
            let _permit = self.limiter(profile).acquire();
            self.backend.embed(profile, text)
        })?;
        if let Some(expected) = profile.embedding_dim {
            if vector.len() != expected {
                return Err(GatewayError::DimensionMismatch {
                    expected,
                    got: vector.len(),
                });
            }
        }
        Ok(vector)
    }

    pub fn perplexity(
        &self,
        profile: &ProviderProfile,
        context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        if target.is_empty() {
            return Err(GatewayError::InvalidRequest("perplexity target must be non-empty".into()));
        }
        if !profile.supports_logprobs {
            return Err(GatewayError::LogprobsUnsupported(profile.id.clone()));
        }
        let digest = perplexity_digest(profile, context, target);
        self.cached_call("perplexity", &digest, || {
            let _permit = self.limiter(profile).acquire();
            self.backend.perplexity(profile, context, target)
        })
    }

    fn cached_call<T, F>(&self, kind: &'static str, digest: &str, call: F) -> Result<T, GatewayError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, GatewayError>,
    {
        if let Some(cache) = &self.cache {
            if let Some(value) = cache.get(kind, digest).map_err(GatewayError::Cache)? {
                return serde_json::from_value(value)
                    .map_err(|e| GatewayError::Cache(format!("corrupt cache entry: {e}")));
            }
            if self.mode == ReplayMode::Strict {
                return Err(GatewayError::ReplayMiss {
                    digest: digest.to_string(),
                    kind,
                });
            }
        }
        let result = call()?;
        if let (Some(cache), ReplayMode::Record) = (&self.cache, self.mode) {
            let value = serde_json::to_value(&result)
                .map_err(|e| GatewayError::Cache(format!("serialize response: {e}")))?;
            cache.put(kind, digest, &value).map_err(GatewayError::Cache)?;
        }
        Ok(result)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest over the semantically significant request fields: model, messages,
/// all sampling parameters, the thinking flag, and the seed.
pub fn chat_digest(profile: &ProviderProfile, req: &ChatRequest) -> String {
    let canonical = serde_json::json!({
        "kind": "chat",
        "model": profile.model_name,
        "messages": req.messages,
        "temperature": req.temperature,
        "top_p": req.top_p,
        "top_k": req.top_k,
        "max_tokens": req.max_tokens,
        "enable_thinking": req.enable_thinking,
        "seed": req.seed,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

pub fn embed_digest(profile: &ProviderProfile, text: &str) -> String {
    let canonical = serde_json::json!({
        "kind": "embed",
        "model": profile.model_name,
        "text": text,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

pub fn perplexity_digest(profile: &ProviderProfile, context: &str, target: &str) -> String {
    let canonical = serde_json::json!({
        "kind": "perplexity",
        "model": profile.model_name,
        "context": context,
        "target": target,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

/// Routes by endpoint scheme.
struct RouterBackend {
    mock: mock::DeterministicMock,
    http: http::HttpBackend,
}

impl RouterBackend {
    fn pick(&self, profile: &ProviderProfile) -> Result<&dyn Backend, GatewayError> {
        if profile.is_mock() {
            Ok(&self.mock)
        } else if profile.endpoint.starts_with("http://") || profile.endpoint.starts_with("https://")
        {
            Ok(&self.http)
        } else {
            Err(GatewayError::NoBackend(profile.endpoint.clone()))
        }
    }
}

impl Backend for RouterBackend {
    fn chat(
        &self,
        profile: &ProviderProfile,
        req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        self.pick(profile)?.chat(profile, req)
    }

    fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.pick(profile)?.embed(profile, text)
    }

    fn perplexity(
        &self,
        profile: &ProviderProfile,
        context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        self.pick(profile)?.perplexity(profile, context, target)
    }
}

/// Cosine similarity between two vectors of equal length.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}
