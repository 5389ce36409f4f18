//! HTTP JSON backends for live runs.
//!
//! Chat wire format (request body POSTed to the chat URL):
//!
//! ```json
//! {"model": "...", "messages": [{"role": "user", "content": "..."}],
//!  "temperature": 0.5, "top_p": 1.0, "max_tokens": 1024, "seed": 7}
//! ```
//!
//! The response may be the neutral shape
//! `{"content": "...", "model": "...", "usage": {"prompt_tokens": 1, "completion_tokens": 2}}`
//! or an OpenAI-style `{"choices": [{"message": {"content": "..."}}], ...}`.
//!
//! Embedding requests send `{"model": "...", "input": "..."}` and accept either
//! `{"embedding": [...]}` or `{"data": [{"embedding": [...]}]}`.
//!
//! A bearer token is taken from `RADAR_API_KEY` when set. Transport failures,
//! timeouts, 429 and 5xx responses are retried per [`RetryPolicy`]; anything
//! else surfaces immediately.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Serialize;
use serde_json::Value;

use super::{
    ChatMessage, ChatProvider, ChatRequest, ChatResponse, Embedder, ProviderError, RetryPolicy,
    Usage, Vector,
};

pub const API_KEY_ENV: &str = "RADAR_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub url: String,
    pub model: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub api_key: Option<String>,
}

impl HttpSettings {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    fn client(&self) -> Result<Client, ProviderError> {
        Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ProviderError::Config(format!("building HTTP client: {e}")))
    }
}

fn post_json(client: &Client, settings: &HttpSettings, body: &impl Serialize) -> Result<Value, ProviderError> {
    settings.retry.run(
        |_| {
            let mut req = client.post(&settings.url).json(body);
            if let Some(key) = &settings.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req
                .send()
                .map_err(|e| ProviderError::Transport(format!("{}: {e}", settings.url)))?;
            let status = resp.status();
            let text = resp
                .text()
                .map_err(|e| ProviderError::Transport(format!("reading body: {e}")))?;
            if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                return Err(ProviderError::Transport(format!("HTTP {status}: {}", truncate(&text))));
            }
            if !status.is_success() {
                return Err(ProviderError::Provider(format!("HTTP {status}: {}", truncate(&text))));
            }
            serde_json::from_str(&text)
                .map_err(|e| ProviderError::Provider(format!("response is not JSON: {e}")))
        },
        ProviderError::is_retryable,
    )
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub struct HttpChatProvider {
    settings: HttpSettings,
    client: Client,
    id: String,
}

impl HttpChatProvider {
    pub fn new(settings: HttpSettings) -> Result<Self, ProviderError> {
        let client = settings.client()?;
        let id = format!(
            "http:{}",
            settings.model.clone().unwrap_or_else(|| settings.url.clone())
        );
        Ok(Self {
            settings,
            client,
            id,
        })
    }
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl ChatProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = WireChatRequest {
            model: self.settings.model.as_deref(),
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let value = post_json(&self.client, &self.settings, &body)?;
        parse_chat_response(&value, &self.id)
    }
}

fn parse_chat_response(value: &Value, fallback_id: &str) -> Result<ChatResponse, ProviderError> {
    let content = value
        .get("content")
        .and_then(Value::as_str)
        .or_else(|| value.pointer("/choices/0/message/content").and_then(Value::as_str))
        .ok_or_else(|| ProviderError::Provider("response has no content field".into()))?;
    if content.is_empty() {
        return Err(ProviderError::Provider("backend returned empty content".into()));
    }
    let usage = value
        .get("usage")
        .map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        })
        .unwrap_or_default();
    let provider_id = value
        .get("model")
        .and_then(Value::as_str)
        .map(|m| format!("http:{m}"))
        .unwrap_or_else(|| fallback_id.to_string());
    Ok(ChatResponse {
        content: content.to_string(),
        provider_id,
        usage,
    })
}

pub struct HttpEmbedder {
    settings: HttpSettings,
    client: Client,
    dim: usize,
    id: String,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings, dim: usize) -> Result<Self, ProviderError> {
        if dim == 0 {
            return Err(ProviderError::Config("embedding dim must be positive".into()));
        }
        let client = settings.client()?;
        let id = format!(
            "http-embed:{}",
            settings.model.clone().unwrap_or_else(|| settings.url.clone())
        );
        Ok(Self {
            settings,
            client,
            dim,
            id,
        })
    }
}

#[derive(Serialize)]
struct WireEmbedRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    input: &'a str,
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, ProviderError> {
        let body = WireEmbedRequest {
            model: self.settings.model.as_deref(),
            input: text,
        };
        let value = post_json(&self.client, &self.settings, &body)?;
        let raw = value
            .get("embedding")
            .or_else(|| value.pointer("/data/0/embedding"))
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Provider("response has no embedding array".into()))?;
        let components = raw
            .iter()
            .map(|c| c.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| ProviderError::Provider("embedding contains non-numbers".into()))?;
        if components.len() != self.dim {
            return Err(ProviderError::Provider(format!(
                "embedding has dim {}, expected {}",
                components.len(),
                self.dim
            )));
        }
        Vector::new(components).map_err(|e| ProviderError::Provider(e.to_string()))
    }
}
