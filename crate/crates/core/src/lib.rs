//! Retrieve-or-think context evolution for multi-hop question answering.
//!
//! A committee of LLM agents votes each round between fetching passages from
//! a corpus (RETRIEVE) and posing and answering a sub-query internally
//! (THINK). The results accumulate in a deduplicated working memory from
//! which the final answer is generated.
//!
//! Modules:
//! - [`memory`]: working memory, actions, prompt rendering
//! - [`committee`]: per-agent decisions and majority vote
//! - [`retriever`]: corpus ingestion, BM25 index, query formulation
//! - [`reasoner`]: THINK executor and final answer synthesis
//! - [`backend`]: completion contract, scripted and HTTP backends
//! - [`orchestrator`]: the round loop, policies, baselines
//! - [`trace`]: line-delimited episode traces
//! - [`eval`]: datasets, scoring, reports, bench runner

pub mod backend;
pub mod committee;
pub mod eval;
pub mod memory;
pub mod orchestrator;
pub mod prompts;
pub mod reasoner;
pub mod retriever;
pub mod scalar;
pub mod trace;

pub use backend::{
    count_tokens, CallTag, Completion, CompletionRequest, HttpBackend, HttpConfig, LlmBackend, ScriptedBackend,
    ScriptedRule, ScriptedRuleSet, TokenUsage,
};
pub use committee::{collect_votes, majority_vote, CommitteeConfig, TieBreak, Vote};
pub use eval::{aggregate, load_dataset, run_bench, score_answer, BenchConfig, Metric, QaItem, Report};
pub use memory::{Action, AceState, MemoryItem, Passage, ThoughtPair, WorkingMemory};
pub use orchestrator::{
    run_episode, run_rag, run_vanilla, step, EpisodeDeps, EpisodePolicy, EpisodeResult, PolicyMode, RoundTrace,
};
pub use prompts::PromptSet;
pub use reasoner::{FinalAnswer, GenerationParams};
pub use retriever::{formulate_query, Corpus, Document, RetrievalRequest, Retriever};
pub use scalar::Score;
pub use trace::{read_traces, write_trace};

/// BM25 index scoring in `f32`.
pub type Bm25IndexF32 = retriever::Bm25Index<f32>;
/// BM25 index scoring in `f64`.
pub type Bm25IndexF64 = retriever::Bm25Index<f64>;
/// Corpus-backed BM25 retriever scoring in `f32`.
pub type Bm25RetrieverF32 = retriever::Bm25Retriever<f32>;
/// Corpus-backed BM25 retriever scoring in `f64`; the default.
pub type Bm25Retriever = retriever::Bm25Retriever<f64>;
