//! Model gateway: one client for chat, embeddings, and token logprobs against
//! OpenAI-compatible endpoints, plus a deterministic mock backend.
//!
//! The gateway owns the reliability concerns so callers stay simple: bearer
//! keys come from the environment variable named in the profile and are never
//! logged, transient failures retry with exponential backoff, chat replies are
//! cached on disk keyed by request content, and each endpoint gets a bounded
//! number of in-flight requests. Batch callers re-associate replies by id, so
//! nothing here depends on completion order.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GatewayError, Result};
use crate::hashing::sha256_hex;

pub mod http;
pub mod mock;

pub use http::HttpBackend;
pub use mock::MockBackend;

/// Sampling controls forwarded to the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 1.0, top_p: 1.0 }
    }
}

/// Connection settings for one logical endpoint role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointProfile {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Base delay for exponential backoff between retry attempts.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub sampling: SamplingParams,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    250
}

impl EndpointProfile {
    /// A profile with library defaults for everything but the address.
    #[must_use]
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointProfile {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            retry_backoff_ms: default_backoff_ms(),
            sampling: SamplingParams::default(),
        }
    }

    pub fn validate(&self, role: &str) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(Error::Config(format!("profile {role}: base_url is empty")));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config(format!("profile {role}: model is empty")));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config(format!("profile {role}: max_in_flight must be at least 1")));
        }
        if !self.sampling.temperature.is_finite() || self.sampling.temperature < 0.0 {
            return Err(Error::Config(format!(
                "profile {role}: temperature {} is not a non-negative number",
                self.sampling.temperature
            )));
        }
        if !self.sampling.top_p.is_finite() || self.sampling.top_p <= 0.0 || self.sampling.top_p > 1.0 {
            return Err(Error::Config(format!(
                "profile {role}: top_p {} is outside (0, 1]",
                self.sampling.top_p
            )));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    fn resolve_api_key(&self) -> std::result::Result<Option<String>, GatewayError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(key)),
                Err(_) => Err(GatewayError::Protocol(format!(
                    "api key environment variable {var} is not set"
                ))),
            },
        }
    }
}

/// One message in a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    #[must_use]
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

/// A fully resolved chat call, as handed to a backend.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub base_url: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    /// Caller-chosen tag that distinguishes otherwise identical requests, so
    /// retries and repeated pipeline stages get their own cache slots.
    pub seed_tag: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// A fully resolved embeddings call.
#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub base_url: String,
    pub model: String,
    pub texts: Vec<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// A fully resolved token-logprob call over a prompt/completion split.
#[derive(Debug, Clone)]
pub struct LogprobRequest {
    pub base_url: String,
    pub model: String,
    pub prompt: String,
    pub completion: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// A chat reply plus whether it came from the on-disk cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub cached: bool,
}

/// Transport implementation behind the gateway.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> std::result::Result<String, GatewayError>;
    fn embed(&self, request: &EmbedRequest) -> std::result::Result<Vec<Vec<f64>>, GatewayError>;
    fn token_logprobs(
        &self,
        request: &LogprobRequest,
    ) -> std::result::Result<Vec<(String, f64)>, GatewayError>;
    fn name(&self) -> &'static str;
}

/// Everything that identifies a chat request for caching. The api key is
/// deliberately absent.
#[derive(Serialize)]
struct ChatCacheKey<'a> {
    base_url: &'a str,
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    seed_tag: &'a str,
}

#[derive(Serialize, Deserialize)]
struct CachedReply {
    text: String,
}

struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn get(&self, key: &str) -> Option<String> {
        let path = self.path_for(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CachedReply>(&bytes) {
            Ok(entry) => Some(entry.text),
            Err(_) => {
                log::warn!("discarding corrupt cache entry {}", path.display());
                None
            }
        }
    }

    fn put(&self, key: &str, text: &str) {
        let path = self.path_for(key);
        let body = serde_json::to_vec(&CachedReply { text: text.to_string() }).expect("cache entry serializes");
        if let Err(err) = crate::fsio::write_atomic(&path, &body) {
            log::warn!("failed to write cache entry {}: {err}", path.display());
        }
    }
}

/// Counting semaphore bounding concurrent backend calls per endpoint.
struct FlightLimiter {
    cap: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl FlightLimiter {
    fn new(cap: usize) -> Self {
        FlightLimiter { cap, in_use: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(self: &Arc<Self>) -> FlightPermit {
        let mut in_use = self.in_use.lock().expect("limiter lock poisoned");
        while *in_use >= self.cap {
            in_use = self.freed.wait(in_use).expect("limiter lock poisoned");
        }
        *in_use += 1;
        FlightPermit { limiter: Arc::clone(self) }
    }
}

struct FlightPermit {
    limiter: Arc<FlightLimiter>,
}

impl Drop for FlightPermit {
    fn drop(&mut self) {
        let mut in_use = self.limiter.in_use.lock().expect("limiter lock poisoned");
        *in_use -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Shared client for all model traffic. Cheap to share by reference across
/// worker threads; the in-flight bound is enforced internally per endpoint.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    limiters: Mutex<HashMap<String, Arc<FlightLimiter>>>,
}

impl Gateway {
    /// Builds a gateway over `backend`. When `cache_dir` is given, chat
    /// replies are cached there keyed by request content.
    #[must_use]
    pub fn new(backend: Arc<dyn Backend>, cache_dir: Option<PathBuf>) -> Self {
        Gateway {
            backend,
            cache: cache_dir.map(|dir| ResponseCache { dir }),
            limiters: Mutex::new(HashMap::new()),
        }
    }

    /// A gateway over the deterministic mock backend, without a cache.
    #[must_use]
    pub fn mock(mock: MockBackend) -> Self {
        Gateway::new(Arc::new(mock), None)
    }

    #[must_use]
    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    fn limiter_for(&self, profile: &EndpointProfile) -> Arc<FlightLimiter> {
        let key = format!("{}\n{}", profile.base_url, profile.model);
        let mut limiters = self.limiters.lock().expect("limiter table lock poisoned");
        Arc::clone(
            limiters
                .entry(key)
                .or_insert_with(|| Arc::new(FlightLimiter::new(profile.max_in_flight.max(1)))),
        )
    }

    /// Sends one user message and returns the reply text.
    ///
    /// Identical `(profile, text, seed_tag)` triples are served from the
    /// cache when one is configured; retryable failures back off
    /// exponentially up to the profile's retry budget.
    pub fn chat(&self, profile: &EndpointProfile, user_text: &str, seed_tag: &str) -> Result<ModelReply> {
        if user_text.trim().is_empty() {
            return Err(GatewayError::Protocol("refusing to send an empty user message".into()).into());
        }
        let request = ChatRequest {
            base_url: profile.base_url.clone(),
            model: profile.model.clone(),
            messages: vec![ChatMessage::user(user_text)],
            temperature: profile.sampling.temperature,
            top_p: profile.sampling.top_p,
            seed_tag: seed_tag.to_string(),
            api_key: profile.resolve_api_key()?,
            timeout: profile.timeout(),
        };

        let key = chat_cache_key(&request);
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&key) {
                return Ok(ModelReply { text, cached: true });
            }
        }

        let permit = self.limiter_for(profile);
        let text = {
            let _guard = permit.acquire();
            retry_loop(profile, || self.backend.chat(&request))?
        };

        if let Some(cache) = &self.cache {
            cache.put(&key, &text);
        }
        Ok(ModelReply { text, cached: false })
    }

    /// Embeds a batch of texts, returning unit-length vectors in input order.
    pub fn embed_batch(&self, profile: &EndpointProfile, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(GatewayError::Protocol("embedding batch is empty".into()).into());
        }
        if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::Protocol(format!("embedding input {pos} is empty")).into());
        }
        let request = EmbedRequest {
            base_url: profile.base_url.clone(),
            model: profile.model.clone(),
            texts: texts.to_vec(),
            api_key: profile.resolve_api_key()?,
            timeout: profile.timeout(),
        };

        let permit = self.limiter_for(profile);
        let mut vectors = {
            let _guard = permit.acquire();
            retry_loop(profile, || self.backend.embed(&request))?
        };

        if vectors.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "endpoint returned {} embeddings for {} inputs",
                vectors.len(),
                texts.len()
            ))
            .into());
        }
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        for (i, vector) in vectors.iter_mut().enumerate() {
            if vector.is_empty() || vector.len() != dim {
                return Err(GatewayError::Protocol(format!(
                    "embedding {i} has dimension {}, expected {dim}",
                    vector.len()
                ))
                .into());
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::Protocol(format!("embedding {i} contains a non-finite value")).into());
            }
            crate::signals::diversity::normalize(vector)
                .map_err(|_| GatewayError::Protocol(format!("embedding {i} has zero norm")))?;
        }
        Ok(vectors)
    }

    /// Per-token log-probabilities of `completion` given `prompt`.
    pub fn token_logprobs(
        &self,
        profile: &EndpointProfile,
        prompt: &str,
        completion: &str,
    ) -> Result<Vec<(String, f64)>> {
        if completion.trim().is_empty() {
            return Err(GatewayError::Protocol("cannot score an empty completion".into()).into());
        }
        let request = LogprobRequest {
            base_url: profile.base_url.clone(),
            model: profile.model.clone(),
            prompt: prompt.to_string(),
            completion: completion.to_string(),
            api_key: profile.resolve_api_key()?,
            timeout: profile.timeout(),
        };

        let permit = self.limiter_for(profile);
        let pairs = {
            let _guard = permit.acquire();
            retry_loop(profile, || self.backend.token_logprobs(&request))?
        };

        if pairs.is_empty() {
            return Err(GatewayError::Protocol("endpoint returned zero completion tokens".into()).into());
        }
        for (token, lp) in &pairs {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(GatewayError::Protocol(format!(
                    "token {token:?} has log-probability {lp}, expected a finite non-positive value"
                ))
                .into());
            }
        }
        Ok(pairs)
    }
}

fn chat_cache_key(request: &ChatRequest) -> String {
    let key = ChatCacheKey {
        base_url: &request.base_url,
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
        top_p: request.top_p,
        seed_tag: &request.seed_tag,
    };
    sha256_hex(serde_json::to_string(&key).expect("cache key serializes").as_bytes())
}

fn retry_loop<T>(
    profile: &EndpointProfile,
    mut op: impl FnMut() -> std::result::Result<T, GatewayError>,
) -> std::result::Result<T, GatewayError> {
    let attempts = profile.max_retries + 1;
    let mut last_error = None;
    for attempt in 0..attempts {
        match op() {
            Ok(value) => return Ok(value),
            Err(err) if err.is_retryable() => {
                log::debug!(
                    "attempt {}/{attempts} against {} failed: {err}",
                    attempt + 1,
                    profile.base_url
                );
                last_error = Some(err);
                if attempt + 1 < attempts {
                    let delay = profile

                        .retry_backoff_ms
                        .saturating_mul(1u64 << attempt.min(16))
                        .min(30_000);
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(err) => return Err(err),
        }
    }
    Err(GatewayError::Exhausted {
        attempts,
        last: last_error.expect("at least one attempt ran").to_string(),
    })
}
