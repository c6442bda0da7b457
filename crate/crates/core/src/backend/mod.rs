//! LLM completion contract and token accounting.
//!
//! Two implementations ship: [`ScriptedBackend`] (deterministic rule table for
//! tests and offline runs) and [`HttpBackend`] (chat-completion endpoint).

mod http;
mod scripted;

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, RetryPolicy, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use scripted::{ScriptedBackend, ScriptedRule, ScriptedRuleSet, TextMatch};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("rule set line {line}: {message}")]
    RuleSet { line: usize, message: String },
    #[error("missing configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which pipeline step issued a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTag {
    Decide,
    SubQuery,
    SubAnswer,
    FinalAnswer,
}

impl CallTag {
    pub fn name(self) -> &'static str {
        match self {
            CallTag::Decide => "decide",
            CallTag::SubQuery => "sub_query",
            CallTag::SubAnswer => "sub_answer",
            CallTag::FinalAnswer => "final_answer",
        }
    }
}

impl FromStr for CallTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "decide" => Ok(CallTag::Decide),
            "subquery" => Ok(CallTag::SubQuery),
            "subanswer" => Ok(CallTag::SubAnswer),
            "finalanswer" | "answer" => Ok(CallTag::FinalAnswer),
            _ => Err(format!("unknown call tag `{s}`")),
        }
    }
}

impl fmt::Display for CallTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub tag: CallTag,
}

impl CompletionRequest {
    pub fn new(tag: CallTag, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            seed: 0,
            max_tokens: 256,
            tag,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Prompt and completion token counts. `total` is always their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawUsage", into = "RawUsage")]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        prompt_tokens: 0,
        completion_tokens: 0,
    };

    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::ZERO, Add::add)
    }
}

#[derive(Serialize, Deserialize)]
struct RawUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
    total: u64,
}

impl From<TokenUsage> for RawUsage {
    fn from(u: TokenUsage) -> Self {
        RawUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
            total: u.total(),
        }
    }
}

impl TryFrom<RawUsage> for TokenUsage {
    type Error = String;

    fn try_from(raw: RawUsage) -> Result<Self, Self::Error> {
        let usage = TokenUsage::new(raw.prompt_tokens, raw.completion_tokens);
        if usage.total() != raw.total {
            return Err(format!(
                "usage total {} != {} + {}",
                raw.total, raw.prompt_tokens, raw.completion_tokens
            ));
        }
        Ok(usage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

/// A text-completion provider. Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Whitespace token count. An approximation, used only when a provider does
/// not report usage.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
