//! Blocking HTTP backend for OpenAI-compatible servers.
//!
//! Chat goes to `{base}/chat/completions`, embeddings to `{base}/embeddings`,
//! and token logprobs to `{base}/completions` using echo mode with zero new
//! tokens, which is how llama.cpp and vllm style servers expose per-token
//! scores for a fixed string.

use serde::Deserialize;
use serde_json::json;

use crate::error::GatewayError;

use super::{Backend, ChatRequest, EmbedRequest, LogprobRequest};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|err| GatewayError::Transport(err.to_string()))?;
        Ok(HttpBackend { client })
    }
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{path}", base_url.trim_end_matches('/'))
}

fn status_excerpt(body: &str) -> String {
    let trimmed = body.trim();
    if trimmed.len() <= 300 {
        trimmed.to_string()
    } else {
        let mut end = 300;
        while !trimmed.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &trimmed[..end])
    }
}

impl HttpBackend {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        timeout: std::time::Duration,
        body: &serde_json::Value,
    ) -> Result<String, GatewayError> {
        let mut request = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|err| GatewayError::Transport(err.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|err| GatewayError::Transport(err.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Status { code: status.as_u16(), body: status_excerpt(&text) });
        }
        Ok(text)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedRow>,
}

#[derive(Deserialize)]
struct EmbedRow {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

impl Backend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        let url = endpoint(&request.base_url, "chat/completions");
        let text = self.post_json(&url, request.api_key.as_deref(), request.timeout, &body)?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|err| GatewayError::Protocol(format!("malformed chat completion reply: {err}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|choice| choice.message.content)
            .ok_or_else(|| GatewayError::Protocol("chat completion reply has no message content".into()))
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({
            "model": request.model,
            "input": request.texts,
        });
        let url = endpoint(&request.base_url, "embeddings");
        let text = self.post_json(&url, request.api_key.as_deref(), request.timeout, &body)?;
        let parsed: EmbedResponse = serde_json::from_str(&text)
            .map_err(|err| GatewayError::Protocol(format!("malformed embeddings reply: {err}")))?;
        let mut rows = parsed.data;
        rows.sort_by_key(|row| row.index);
        Ok(rows.into_iter().map(|row| row.embedding).collect())
    }

    fn token_logprobs(&self, request: &LogprobRequest) -> Result<Vec<(String, f64)>, GatewayError> {
        let full_text = format!("{}{}", request.prompt, request.completion);
        let body = json!({
            "model": request.model,
            "prompt": full_text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let url = endpoint(&request.base_url, "completions");
        let text = self.post_json(&url, request.api_key.as_deref(), request.timeout, &body)?;
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|err| GatewayError::Protocol(format!("malformed completions reply: {err}")))?;
        let block = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|choice| choice.logprobs)
            .ok_or_else(|| {
                GatewayError::Capability(
                    "endpoint did not return token log-probabilities; supply loss files instead".into(),
                )
            })?;
        if block.tokens.len() != block.token_logprobs.len() || block.tokens.len() != block.text_offset.len()
        {
            return Err(GatewayError::Protocol(format!(
                "logprob arrays disagree in length: {} tokens, {} logprobs, {} offsets",
                block.tokens.len(),
                block.token_logprobs.len(),
                block.text_offset.len()
            )));
        }
        let boundary = request.prompt.len();
        let mut pairs = Vec::new();
        for ((token, lp), offset) in
            block.tokens.into_iter().zip(block.token_logprobs).zip(block.text_offset)
        {
            if offset < boundary {
                continue;
            }
            match lp {
                Some(lp) => pairs.push((token, lp)),
                None => {
                    return Err(GatewayError::Protocol(format!(
                        "token {token:?} at offset {offset} is inside the completion but has no log-probability"
                    )))
                }
            }
        }
        Ok(pairs)
    }

    fn name(&self) -> &'static str {
        "http"
    }
}
