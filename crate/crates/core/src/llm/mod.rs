//! Hosted language model behind a swappable provider.
//!
//! The model talks to the agent through a line protocol (see [`protocol`]):
//! `SEARCH: [..]` / `FINAL` for agent turns and `SCORE:` / `EXPLANATION:` for
//! verdicts. Prompts are rendered from versioned templates ([`prompt`]).

mod http;
mod mock;
pub mod prompt;
pub mod protocol;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpLlmProvider, LlmProviderConfig};
pub use mock::{ScriptedReply, TranscriptMock};
pub use prompt::{PromptError, TemplateId, render_prompt};
pub use protocol::{AgentDirective, ProtocolError, VerdictPayload, format_verdict, parse_agent_directive, parse_verdict};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    Assistant,
    User,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Characters across the system prompt and all messages.
    pub fn char_len(&self) -> usize {
        self.system_prompt.chars().count()
            + self.messages.iter().map(|m| m.content.chars().count()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("language model unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("request exceeds the model context")]
    ContextTooLong,
    #[error("language model timed out")]
    Timeout,
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Validates requests and bounds each provider call with a timeout.
#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    timeout: Duration,
    temperature: f64,
    max_output_tokens: u32,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self {
            provider,
            timeout: Duration::from_secs(120),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, tokens: u32) -> Self {
        self.max_output_tokens = tokens;
        self
    }

    /// Builds a request with the gateway's sampling settings.
    pub fn request(&self, system_prompt: &str, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest {
            system_prompt: system_prompt.to_string(),
            messages,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        match tokio::time::timeout(self.timeout, self.provider.complete(request)).await {
            Ok(result) => result,
            Err(_) => Err(LlmError::Timeout),
        }
    }
}
