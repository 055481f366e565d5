//! Client abstraction over a text-generation endpoint and a text-embedding
//! endpoint.
//!
//! A [`Gateway`] owns one [`Backend`] per role, enforces the per-endpoint
//! concurrency bound, retries transient failures and L2-normalizes every
//! embedding it returns. All network I/O in the crate goes through here.

mod http;
pub mod mock;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{MockBackend, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error (status {status:?}) after {attempts} attempt(s): {message}")]
    Transport {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("mock scenario has no pool for label {0:?}")]
    UnknownScenarioLabel(String),
}

impl GatewayError {
    /// Failures worth retrying: connection problems, timeouts, 408/429/5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport { status: None, .. } => true,
            GatewayError::Transport {
                status: Some(s), ..
            } => *s == 408 || *s == 429 || *s >= 500,
            GatewayError::Timeout { .. } => true,
            _ => false,
        }
    }

    /// Failures that will not go away by asking again with different input.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth(_)
                | GatewayError::UnknownScenarioLabel(_)
                | GatewayError::InvalidRequest(_)
        )
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            GatewayError::Transport {
                status, message, ..
            } => GatewayError::Transport {
                status,
                attempts: n,
                message,
            },
            GatewayError::Timeout { .. } => GatewayError::Timeout { attempts: n },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    messages: Vec<Message>,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(
        messages: Vec<Message>,
        temperature: f64,
        max_tokens: u32,
        seed: Option<u64>,
    ) -> Result<Self, GatewayError> {
        match messages.last() {
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                return Err(GatewayError::InvalidRequest(
                    "last message must come from the user".into(),
                ))
            }
            _ => {}
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be non-negative, got {temperature}"
            )));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(Self {
            messages,
            temperature,
            max_tokens,
            seed,
        })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn last_user_message(&self) -> &str {
        &self.messages.last().expect("validated non-empty").content
    }
}

/// An L2-normalized text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length. Fails on empty, zero or non-finite
    /// input.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::InvalidResponse("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::InvalidResponse(
                "non-finite embedding entry".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GatewayError::InvalidResponse("zero embedding".into()));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// A secret that never shows up in debug output.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub model_name: String,
    pub request_timeout: Duration,
    pub max_concurrent: usize,
    pub retry: RetryPolicy,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model_name: model_name.into(),
            request_timeout: Duration::from_secs(60),
            max_concurrent: 8,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrent == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_concurrent must be at least 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One transport. Implementations do a single attempt; retries, limits and
/// normalization are the gateway's job.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &GenerationRequest) -> Result<String, GatewayError>;

    /// Raw (unnormalized) vectors, one per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    fn model_name(&self) -> &str;
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Endpoint {
    backend: Arc<dyn Backend>,
    limiter: Limiter,
    max_concurrent: usize,
    retry: RetryPolicy,
}

impl Endpoint {
    fn new(backend: Arc<dyn Backend>, max_concurrent: usize, retry: RetryPolicy) -> Self {
        Self {
            backend,
            limiter: Limiter::new(max_concurrent.max(1)),
            max_concurrent: max_concurrent.max(1),
            retry,
        }
    }

    fn call<T>(
        &self,
        f: impl Fn(&dyn Backend) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                f(self.backend.as_ref())
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let factor = 1u32 << (attempt - 1).min(16);
                    thread::sleep(self.retry.backoff_base * factor);
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}

/// Texts per embedding request.
const EMBED_BATCH: usize = 64;

/// Shared client for generation and embedding.
pub struct Gateway {
    generation: Endpoint,
    embedding: Endpoint,
    dim: OnceLock<usize>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("generation_model", &self.generation.backend.model_name())
            .field("embedding_model", &self.embedding.backend.model_name())
            .field("dim", &self.dim.get())
            .finish()
    }
}

impl Gateway {
    pub fn new(
        generation: Arc<dyn Backend>,
        generation_limit: usize,
        generation_retry: RetryPolicy,
        embedding: Arc<dyn Backend>,
        embedding_limit: usize,
        embedding_retry: RetryPolicy,
    ) -> Self {
        Self {
            generation: Endpoint::new(generation, generation_limit, generation_retry),
            embedding: Endpoint::new(embedding, embedding_limit, embedding_retry),
            dim: OnceLock::new(),
        }
    }

    /// Gateway over two OpenAI-compatible HTTP endpoints.
    pub fn http(
        generation: &BackendConfig,
        embedding: &BackendConfig,
    ) -> Result<Self, GatewayError> {
        generation.validate()?;
        embedding.validate()?;
        Ok(Self::new(
            Arc::new(HttpBackend::new(generation.clone())),
            generation.max_concurrent,
            generation.retry,
            Arc::new(HttpBackend::new(embedding.clone())),
            embedding.max_concurrent,
            embedding.retry,
        ))
    }

    /// Gateway where both roles are served by one mock backend.
    pub fn mock(backend: Arc<MockBackend>, max_concurrent: usize) -> Self {
        let retry = RetryPolicy {
            max_attempts: 1,
            backoff_base: Duration::ZERO,
        };
        Self::new(
            backend.clone(),
            max_concurrent,
            retry,
            backend,
            max_concurrent,
            retry,
        )
    }

    pub fn generation_concurrency(&self) -> usize {
        self.generation.max_concurrent
    }

    /// One completion, retried on transient failures.
    pub fn complete(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        self.generation.call(|b| b.complete(req))
    }

    /// Completes every request, fanning out up to the concurrency bound.
    /// Results come back in request order.
    pub fn complete_all(&self, reqs: &[GenerationRequest]) -> Vec<Result<String, GatewayError>> {
        fan_out(reqs, self.generation.max_concurrent, |_, r| {
            self.complete(r)
        })
    }

    /// Embeds `texts`, returning one unit-norm vector per input in order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("text {i} is empty")));
        }
        let batches: Vec<&[String]> = texts.chunks(EMBED_BATCH).collect();
        let results = fan_out(&batches, self.embedding.max_concurrent, |_, batch| {
            let raw = self.embedding.call(|b| b.embed(batch))?;
            if raw.len() != batch.len() {
                return Err(GatewayError::InvalidResponse(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    raw.len()
                )));
            }
            raw.into_iter()
                .map(Embedding::normalized)
                .collect::<Result<Vec<_>, _>>()
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        let expected = *self.dim.get_or_init(|| out[0].dim());
        if let Some(bad) = out.iter().find(|e| e.dim() != expected) {
            return Err(GatewayError::DimensionMismatch {
                expected,
                got: bad.dim(),
            });
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    /// `model_name/dim` of the embedding backend. Probes the backend once if
    /// no embedding has been requested yet.
    pub fn embedder_fingerprint(&self) -> Result<String, GatewayError> {
        let dim = match self.dim.get() {
            Some(d) => *d,
            None => self.embed_one("dimension probe")?.dim(),
        };
        Ok(format!("{}/{}", self.embedding.backend.model_name(), dim))
    }

    pub fn generation_model(&self) -> &str {
        self.generation.backend.model_name()
    }
}

/// Maps `f` over `items` on up to `workers` scoped threads, preserving order.
pub(crate) fn fan_out<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
