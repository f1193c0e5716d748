//! Deterministic in-process backend for tests and dry runs.
//!
//! Replies are pure functions of the request content, so two runs over the
//! same inputs produce byte-identical artifacts. The mock recognizes the
//! pipeline's own prompt shapes (step-wise rewrites, new-prompt synthesis,
//! rating requests) and answers each in the format the caller expects to
//! parse. Exact-match canned replies can be layered on top for unit tests,
//! and a failure queue injects HTTP statuses to exercise retry handling.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GatewayError;
use crate::hashing::stable_hash_u64;

use super::{Backend, ChatRequest, EmbedRequest, LogprobRequest};

pub struct MockBackend {
    embed_dim: usize,
    latency: Option<Duration>,
    canned_chat: Mutex<BTreeMap<String, String>>,
    canned_embeddings: Mutex<BTreeMap<String, Vec<f64>>>,
    canned_logprobs: Mutex<BTreeMap<(String, String), Vec<(String, f64)>>>,
    chat_failures: Mutex<VecDeque<u16>>,
    chat_calls: Arc<AtomicU64>,
    in_flight: Arc<AtomicU64>,
    high_water: Arc<AtomicU64>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new()
    }
}

impl MockBackend {
    #[must_use]
    pub fn new() -> Self {
        MockBackend {
            embed_dim: 16,
            latency: None,
            canned_chat: Mutex::new(BTreeMap::new()),
            canned_embeddings: Mutex::new(BTreeMap::new()),
            canned_logprobs: Mutex::new(BTreeMap::new()),
            chat_failures: Mutex::new(VecDeque::new()),
            chat_calls: Arc::new(AtomicU64::new(0)),
            in_flight: Arc::new(AtomicU64::new(0)),
            high_water: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Dimension of derived embedding vectors (canned ones are untouched).
    #[must_use]
    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim.max(1);
        self
    }

    /// Sleep inserted into every chat call, for concurrency tests.
    #[must_use]
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    /// Fixes the reply for an exact user-message match.
    pub fn set_chat_reply(&self, user_text: impl Into<String>, reply: impl Into<String>) {
        self.canned_chat.lock().unwrap().insert(user_text.into(), reply.into());
    }

    /// Fixes the embedding for an exact input text.
    pub fn set_embedding(&self, text: impl Into<String>, vector: Vec<f64>) {
        self.canned_embeddings.lock().unwrap().insert(text.into(), vector);
    }

    /// Fixes the token logprobs for an exact prompt/completion pair.
    pub fn set_logprobs(
        &self,
        prompt: impl Into<String>,
        completion: impl Into<String>,
        pairs: Vec<(String, f64)>,
    ) {
        self.canned_logprobs.lock().unwrap().insert((prompt.into(), completion.into()), pairs);
    }

    /// Queues `count` chat failures with the given HTTP status; each chat
    /// call consumes one before any reply is produced.
    pub fn push_chat_failures(&self, status: u16, count: usize) {
        let mut queue = self.chat_failures.lock().unwrap();
        for _ in 0..count {
            queue.push_back(status);
        }
    }

    /// Handle on the chat attempt counter; stays valid after the backend
    /// moves into a gateway.
    #[must_use]
    pub fn call_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.chat_calls)
    }

    /// Handle on the maximum concurrency observed across all calls.
    #[must_use]
    pub fn high_water_mark(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.high_water)
    }

    fn track(&self) -> ConcurrencyGuard {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        ConcurrencyGuard { in_flight: Arc::clone(&self.in_flight) }
    }
}

struct ConcurrencyGuard {
    in_flight: Arc<AtomicU64>,
}

impl Drop for ConcurrencyGuard {
    fn drop(&mut self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let _guard = self.track();
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        if let Some(status) = self.chat_failures.lock().unwrap().pop_front() {
            return Err(GatewayError::Status { code: status, body: "injected failure".into() });
        }
        let user_text = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .ok_or_else(|| GatewayError::Protocol("chat request has no user message".into()))?;
        if let Some(reply) = self.canned_chat.lock().unwrap().get(user_text) {
            return Ok(reply.clone());
        }
        Ok(derive_chat_reply(&request.model, user_text, &request.seed_tag))
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, GatewayError> {
        let _guard = self.track();
        let canned = self.canned_embeddings.lock().unwrap();
        Ok(request
            .texts
            .iter()
            .map(|text| match canned.get(text) {
                Some(vector) => vector.clone(),
                None => derive_embedding(&request.model, text, self.embed_dim),
            })
            .collect())
    }

    fn token_logprobs(&self, request: &LogprobRequest) -> Result<Vec<(String, f64)>, GatewayError> {
        let _guard = self.track();
        let key = (request.prompt.clone(), request.completion.clone());
        if let Some(pairs) = self.canned_logprobs.lock().unwrap().get(&key) {
            return Ok(pairs.clone());
        }
        let tokens: Vec<&str> = request.completion.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(GatewayError::Protocol("completion has no tokens".into()));
        }
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(i, token)| {
                let h = stable_hash_u64(&[
                    "mock-logprob",
                    &request.model,
                    &request.prompt,
                    &request.completion,
                    &i.to_string(),
                ]);
                let lp = -(0.05 + (h % 4000) as f64 / 1000.0);
                ((*token).to_string(), lp)
            })
            .collect())
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

fn derive_chat_reply(model: &str, user_text: &str, seed_tag: &str) -> String {
    let h = stable_hash_u64(&["mock-chat", model, user_text, seed_tag]);
    if user_text.contains("Step 4 #Final Rewritten Prompt#:") && user_text.contains("#Prompt#:\n") {
        let block = user_text
            .rsplit_once("\n\n#Prompt#:\n")
            .map(|(_, rest)| rest.trim())
            .unwrap_or("the task");
        let rewritten = if user_text.contains("task to simplify") {
            format!("Answer the following in simple steps: {block}")
        } else {
            format!("Provide a clear and complete answer: {block}")
        };
        return format!(
            "Step 1 #Methods List#:\n1. Identify the core request.\n2. Drop constraints that add no learning value.\n\n\
             Step 2 #Plan#:\n1. Restate the task plainly.\n2. Check the result reads on its own.\n\n\
             Step 3 #Rewritten Prompt#:\n{rewritten}\n\n\
             Step 4 #Final Rewritten Prompt#:\n{rewritten}"
        );
    }
    if user_text.contains("#New Prompt#:") {
        let core = user_text
            .rsplit_once("\n\n#Core Prompt#:\n")
            .map(|(_, rest)| rest.trim())
            .unwrap_or("the topic");
        return format!("#New Prompt#:\nExplore a closely related question: {core}");
    }
    if user_text.contains("We would like to request your feedback on the") {
        let score = (h % 101) as f64 / 10.0;
        return format!("{score:.1}. Deterministic mock rating.");
    }
    format!("Mock answer {:08x}: a concise, deterministic response to the request.", h & 0xffff_ffff)
}

fn derive_embedding(model: &str, text: &str, dim: usize) -> Vec<f64> {
    let seed = stable_hash_u64(&["mock-embed", model, text]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
