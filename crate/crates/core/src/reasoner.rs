//! THINK executor and final answer synthesis.
//!
//! THINK is two sequential completions: one producing a sub-query, one
//! answering it from the model's own knowledge plus the rendered memory. No
//! retriever is involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CallTag, CompletionRequest, LlmBackend, TokenUsage};
use crate::memory::{MemoryError, ThoughtPair, WorkingMemory};
use crate::prompts::{fill, PromptSet, PH_MEMORY, PH_QUESTION, PH_SUB_QUERY};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("sub-query generation returned blank text")]
    EmptySubQuery,
    #[error("sub-answer generation returned blank text")]
    EmptySubAnswer,
}

/// Sampling settings shared by the THINK and answer calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: 0,
            max_tokens: 256,
        }
    }
}

impl GenerationParams {
    fn request(&self, tag: CallTag, prompt: String) -> CompletionRequest {
        CompletionRequest::new(tag, prompt)
            .with_temperature(self.temperature)
            .with_seed(self.seed)
            .with_max_tokens(self.max_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkOutcome {
    pub thought: ThoughtPair,
    pub usage: TokenUsage,
    /// Raw sub-query and sub-answer replies.
    pub raw_responses: (String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub text: String,
    pub usage: TokenUsage,
}

/// First non-blank line, with a leading `Sub-query:` label removed.
pub fn parse_sub_query(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let lower = line.to_ascii_lowercase();
    let body = ["sub-query:", "subquery:", "sub query:"]
        .iter()
        .find_map(|p| lower.starts_with(p).then(|| line[p.len()..].trim()))
        .unwrap_or(line);
    (!body.is_empty()).then(|| body.to_string())
}

pub fn sub_query_prompt(prompts: &PromptSet, memory: &WorkingMemory, question: &str) -> Result<String, MemoryError> {
    let rendered = memory.render(&prompts.render)?;
    Ok(fill(&prompts.sub_query, &[(PH_QUESTION, question), (PH_MEMORY, &rendered)]))
}

pub fn sub_answer_prompt(
    prompts: &PromptSet,
    memory: &WorkingMemory,
    question: &str,
    sub_query: &str,
) -> Result<String, MemoryError> {
    let rendered = memory.render(&prompts.render)?;
    Ok(fill(
        &prompts.sub_answer,
        &[(PH_QUESTION, question), (PH_MEMORY, &rendered), (PH_SUB_QUERY, sub_query)],
    ))
}

pub fn answer_prompt(prompts: &PromptSet, memory: &WorkingMemory, question: &str) -> Result<String, MemoryError> {
    let rendered = memory.render(&prompts.render)?;
    Ok(fill(&prompts.final_answer, &[(PH_QUESTION, question), (PH_MEMORY, &rendered)]))
}

pub fn think(
    backend: &dyn LlmBackend,
    prompts: &PromptSet,
    memory: &WorkingMemory,
    question: &str,
    params: &GenerationParams,
) -> Result<ThinkOutcome, ReasonerError> {
    let first = backend.complete(&params.request(
        CallTag::SubQuery,
        sub_query_prompt(prompts, memory, question)?,
    ))?;
    let sub_query = parse_sub_query(&first.text).ok_or(ReasonerError::EmptySubQuery)?;

    let second = backend.complete(&params.request(
        CallTag::SubAnswer,
        sub_answer_prompt(prompts, memory, question, &sub_query)?,
    ))?;
    let sub_answer = second.text.trim();
    if sub_answer.is_empty() {
        return Err(ReasonerError::EmptySubAnswer);
    }

    Ok(ThinkOutcome {
        thought: ThoughtPair::new(sub_query, sub_answer),
        usage: first.usage + second.usage,
        raw_responses: (first.text, second.text),
    })
}

pub fn answer(
    backend: &dyn LlmBackend,
    prompts: &PromptSet,
    memory: &WorkingMemory,
    question: &str,
    params: &GenerationParams,
) -> Result<FinalAnswer, ReasonerError> {
    let completion = backend.complete(&params.request(
        CallTag::FinalAnswer,
        answer_prompt(prompts, memory, question)?,
    ))?;
    Ok(FinalAnswer {
        text: completion.text.trim().to_string(),
        usage: completion.usage,
    })
}
