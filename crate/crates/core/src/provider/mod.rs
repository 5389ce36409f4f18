//! Chat-completion and text-embedding backends behind one interface.
//!
//! Agents only ever see [`ChatProvider`] and [`Embedder`]. Tests and offline
//! runs plug in [`ScriptedProvider`] and [`HashEmbedder`]; live runs use the
//! HTTP implementations in [`http`].

pub mod http;
mod embed;
mod scripted;

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{embed_text, l2_norm, Embedder, HashEmbedder, Vector, DEFAULT_EMBED_DIM};
pub use scripted::{RecordingProvider, ScriptEntry, ScriptedProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Network failure or timeout. The only retryable kind.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("no scripted response for request fingerprint {fingerprint}")]
    MissingKey { fingerprint: String },
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("provider config error: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling parameters shared by every chat call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Sampling {
    /// Diverse hypothesis and query generation.
    pub const HIGH: Sampling = Sampling {
        temperature: 1.0,
        top_p: 0.95,
    };
    /// Answers restricted to retrieved content.
    pub const LOW: Sampling = Sampling {
        temperature: 0.1,
        top_p: 1.0,
    };
    /// Final reasoning over all gathered material.
    pub const MID: Sampling = Sampling {
        temperature: 0.5,
        top_p: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Passed through to sampling backends; not part of the fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, sampling: Sampling, max_tokens: u32) -> Self {
        Self {
            messages,
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            max_tokens,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::Validation("request has no messages".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ProviderError::Validation(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::Validation(format!(
                "top_p {} must be in (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::Validation("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest of messages and sampling parameters (seed excluded).
    /// Keyed scripts are matched on this value.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            messages: &'a [ChatMessage],
            temperature: f64,
            top_p: f64,
            max_tokens: u32,
        }
        let canonical = Canonical {
            messages: &self.messages,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        };
        let bytes = serde_json::to_vec(&canonical).expect("request serializes");
        short_digest(&bytes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub provider_id: String,
    pub usage: Usage,
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// Validates the request, then asks the provider for a completion.
pub fn chat_complete(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
) -> Result<ChatResponse, ProviderError> {
    request.validate()?;
    provider.complete(request)
}

/// First 16 bytes of SHA-256, hex encoded.
pub fn short_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..16])
}

/// Bounded exponential backoff for transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; no delay before the first try
        if attempt <= 1 {
            return Duration::ZERO;
        }
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (attempt - 2).min(16)))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// attempts run out. The last error is returned.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            thread::sleep(self.delay_before(attempt));
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if attempt < attempts && retryable(&e) => {
                    log::warn!("attempt {attempt}/{attempts} failed, retrying");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
