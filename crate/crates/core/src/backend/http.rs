//! Chat-completion HTTP client with retry and an in-flight limit.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{count_tokens, BackendError, Completion, CompletionRequest, LlmBackend, TokenUsage};

pub const ENV_API_BASE: &str = "ACE_API_BASE";
pub const ENV_API_KEY: &str = "ACE_API_KEY";
pub const ENV_MODEL: &str = "ACE_MODEL";

/// Capped exponential backoff: `base_delay * 2^(attempt-1)`, at most `max_delay`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Upper bound on concurrent requests; `None` is unlimited.
    pub max_in_flight: Option<usize>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_in_flight: None,
        }
    }

    /// Reads `ACE_API_BASE`, `ACE_MODEL` and the optional `ACE_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limiter poisoned");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limiter poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    seed: u64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<ProviderUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ProviderUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct HttpBackend {
    config: HttpConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    limit: Option<InFlightLimit>,
}

enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let limit = config.max_in_flight.map(|max| InFlightLimit {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        });
        Ok(Self {
            config,
            endpoint,
            client,
            limit,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, body: &ChatRequest<'_>, prompt: &str) -> Result<Completion, AttemptError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::Status {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(BackendError::Malformed(e.to_string())))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::Fatal(BackendError::Malformed("no choices".into())))?;
        let usage = match parsed.usage {
            Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::new(count_tokens(prompt), count_tokens(&content)),
        };
        Ok(Completion {
            text: content,
            usage,
        })
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            seed: request.seed,
            max_tokens: request.max_tokens,
        };
        let _permit = self.limit.as_ref().map(InFlightLimit::acquire);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body, &request.prompt) {
                Ok(c) => return Ok(c),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => {
                    log::warn!("{} attempt {attempt}/{attempts} failed: {msg}", self.endpoint);
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(self.config.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}
