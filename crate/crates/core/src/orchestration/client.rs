use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("environment variable {0} holding the api key is not set")]
    MissingApiKey(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<EndpointError> },
}

impl EndpointError {
    /// Transport failures, throttling and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            EndpointError::Transport(_) => true,
            EndpointError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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

/// Chat completion plus text embedding. One call is one endpoint request.
pub trait LlmClient: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        (**self).chat(messages)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        (**self).embed(text)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        (**self).chat(messages)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        (**self).embed(text)
    }
}

/// Connection settings. The api key itself never appears here: only the
/// name of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    pub api_key_env: String,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
    pub temperature: Option<f64>,
    pub chat_path: String,
    pub embed_path: String,
    pub auth_header: String,
    pub auth_prefix: String,
    pub messages_field: String,
    pub input_field: String,
    /// JSON pointer to the reply text in a chat response.
    pub chat_reply_pointer: String,
    /// JSON pointer to the vector in an embedding response.
    pub embedding_pointer: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: "REVIEWGRAPH_API_KEY".into(),
            max_concurrency: 4,
            timeout_secs: 120,
            retry_limit: 3,
            backoff_base_ms: 500,
            temperature: None,
            chat_path: "/chat/completions".into(),
            embed_path: "/embeddings".into(),
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            messages_field: "messages".into(),
            input_field: "input".into(),
            chat_reply_pointer: "/choices/0/message/content".into(),
            embedding_pointer: "/data/0/embedding".into(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_concurrency == 0 {
            return Err("max_concurrency must be at least 1".into());
        }
        if self.api_key_env.trim().is_empty() {
            return Err("api_key_env must name an environment variable".into());
        }
        Ok(())
    }

    pub fn backoff(&self) -> Backoff {
        Backoff {
            retries: self.retry_limit,
            base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub retries: u32,
    pub base: Duration,
}

impl Backoff {
    /// Delay before retry `k` (0-based): `base * 2^k`.
    pub fn delay(&self, k: u32) -> Duration {
        self.base.saturating_mul(1u32.checked_shl(k).unwrap_or(u32::MAX))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Wraps a client with bounded exponential-backoff retries.
pub struct RetryingClient<C> {
    inner: C,
    backoff: Backoff,
    sleeper: Sleeper,
}

impl<C: LlmClient> RetryingClient<C> {
    pub fn new(inner: C, backoff: Backoff) -> Self {
        Self::with_sleeper(inner, backoff, Arc::new(std::thread::sleep))
    }

    pub fn with_sleeper(inner: C, backoff: Backoff, sleeper: Sleeper) -> Self {
        RetryingClient {
            inner,
            backoff,
            sleeper,
        }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn run<T>(&self, mut call: impl FnMut() -> Result<T, EndpointError>) -> Result<T, EndpointError> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.backoff.retries => {
                    (self.sleeper)(self.backoff.delay(attempt));
                    attempt += 1;
                }
                Err(e) if attempt > 0 => {
                    return Err(EndpointError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl<C: LlmClient> LlmClient for RetryingClient<C> {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.run(|| self.inner.chat(messages))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        self.run(|| self.inner.embed(text))
    }
}
