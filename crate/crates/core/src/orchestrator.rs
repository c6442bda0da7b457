//! The round loop: decide, act, grow memory, and finally answer.
//!
//! Each round picks RETRIEVE or THINK (by committee vote or by a policy
//! override), executes it, and merges the result into working memory by set
//! union. After the round budget is spent the final answer is generated from
//! the accumulated memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{LlmBackend, TokenUsage};
use crate::committee::{collect_votes, majority_vote, CommitteeConfig, CommitteeError, Vote};
use crate::memory::{AceState, Action, MemoryError, MemoryItem, WorkingMemory};
use crate::prompts::PromptSet;
use crate::reasoner::{answer, think, FinalAnswer, GenerationParams, ReasonerError};
use crate::retriever::{formulate_query, RetrievalError, RetrievalRequest, Retriever};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "schedule")]
pub enum PolicyMode {
    Vote,
    AlwaysRetrieve,
    AlwaysThink,
    FixedSchedule(Vec<Action>),
}

impl PolicyMode {
    /// `vote`, `always-retrieve`, `always-think`, or `schedule:R,T,...`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("schedule:") {
            let actions = rest
                .split(',')
                .map(|a| Action::parse(a).ok_or_else(|| format!("bad schedule entry `{a}`")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(PolicyMode::FixedSchedule(actions));
        }
        match s.replace('_', "-").to_ascii_lowercase().as_str() {
            "vote" => Ok(PolicyMode::Vote),
            "always-retrieve" => Ok(PolicyMode::AlwaysRetrieve),
            "always-think" => Ok(PolicyMode::AlwaysThink),
            _ => Err(format!(
                "unknown policy `{s}` (expected vote, always-retrieve, always-think or schedule:R,T,...)"
            )),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicyMode::Vote => "vote".into(),
            PolicyMode::AlwaysRetrieve => "always-retrieve".into(),
            PolicyMode::AlwaysThink => "always-think".into(),
            PolicyMode::FixedSchedule(s) => format!(
                "schedule:{}",
                s.iter()
                    .map(|a| &a.label()[..1])
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodePolicy {
    pub mode: PolicyMode,
    /// Round 0 retrieves without voting (memory holds only the question).
    /// Applies to `Vote` and `AlwaysThink`; a fixed schedule is followed as given.
    pub force_first_retrieve: bool,
    /// Stop before the budget when a round adds nothing to memory.
    pub early_stop: bool,
}

impl Default for EpisodePolicy {
    fn default() -> Self {
        Self {
            mode: PolicyMode::Vote,
            force_first_retrieve: true,
            early_stop: false,
        }
    }
}

impl EpisodePolicy {
    pub fn new(mode: PolicyMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn with_force_first_retrieve(mut self, on: bool) -> Self {
        self.force_first_retrieve = on;
        self
    }

    /// Action fixed by the policy for `round`, or `None` when the committee decides.
    pub fn override_for(&self, round: usize) -> Option<Action> {
        match &self.mode {
            PolicyMode::FixedSchedule(s) => s.get(round).copied(),
            PolicyMode::AlwaysRetrieve => Some(Action::Retrieve),
            _ if round == 0 && self.force_first_retrieve => Some(Action::Retrieve),
            PolicyMode::AlwaysThink => Some(Action::Think),
            PolicyMode::Vote => None,
        }
    }
}

/// Shared, read-only collaborators of an episode.
#[derive(Clone, Copy)]
pub struct EpisodeDeps<'a> {
    pub backend: &'a dyn LlmBackend,
    pub retriever: &'a dyn Retriever,
    pub prompts: &'a PromptSet,
    pub top_k: usize,
    pub generation: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// Empty when the policy chose the action.
    pub votes: Vec<Vote>,
    pub action: Action,
    /// Search query, for RETRIEVE rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// Summaries of the items that were new to memory.
    pub items_added: Vec<String>,
    /// Items produced by the action before deduplication.
    pub items_produced: usize,
    pub usage: TokenUsage,
}

/// Where and why an episode stopped early on an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aborted {
    pub round: usize,
    pub message: String,
    /// Tokens spent in the failed round before the error.
    pub usage: TokenUsage,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    #[serde(default)]
    pub episode_id: String,
    pub question: String,
    pub answer: FinalAnswer,
    pub rounds: Vec<RoundTrace>,
    pub total_usage: TokenUsage,
    pub think_count: usize,
    pub retrieve_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<Aborted>,
}

impl EpisodeResult {
    fn empty(question: &str) -> Self {
        Self {
            episode_id: String::new(),
            question: question.to_string(),
            answer: FinalAnswer {
                text: String::new(),
                usage: TokenUsage::ZERO,
            },
            rounds: Vec::new(),
            total_usage: TokenUsage::ZERO,
            think_count: 0,
            retrieve_count: 0,
            aborted: None,
        }
    }

    /// Rebuilds the derived counters from `rounds`, `answer` and `aborted`.
    pub fn recount(&mut self) {
        self.think_count = self.rounds.iter().filter(|r| r.action == Action::Think).count();
        self.retrieve_count = self.rounds.len() - self.think_count;
        self.total_usage = self.rounds.iter().map(|r| r.usage).sum::<TokenUsage>()
            + self.answer.usage
            + self.aborted.as_ref().map_or(TokenUsage::ZERO, |a| a.usage);
    }

    pub fn actions(&self) -> Vec<Action> {
        self.rounds.iter().map(|r| r.action).collect()
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted.is_some()
    }

    /// Percentage of rounds that were THINK; 0 when there were no rounds.
    pub fn think_percent(&self) -> f64 {
        let n = self.think_count + self.retrieve_count;
        if n == 0 {
            0.0
        } else {
            100.0 * self.think_count as f64 / n as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum RoundError {
    #[error(transparent)]
    Committee(#[from] CommitteeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("round budget of {0} already spent")]
    BudgetExhausted(usize),
    #[error("fixed schedule has {schedule} actions but the budget is {budget} rounds")]
    ScheduleLength { schedule: usize, budget: usize },
}

/// A failed step: the error plus whatever it cost.
#[derive(Debug, Error)]
#[error("round {round}: {source}")]
pub struct StepError {
    pub round: usize,
    #[source]
    pub source: RoundError,
    pub usage: TokenUsage,
    pub votes: Vec<Vote>,
}

/// An aborted episode. `partial` holds the trace up to the failure.
#[derive(Debug, Error)]
#[error("episode aborted: {source}")]
pub struct EpisodeError {
    #[source]
    pub source: RoundError,
    pub partial: Box<EpisodeResult>,
}

fn step_err(round: usize, source: impl Into<RoundError>) -> StepError {
    StepError {
        round,
        source: source.into(),
        usage: TokenUsage::ZERO,
        votes: Vec::new(),
    }
}

/// Executes one decision-action round and returns the next state.
pub fn step(
    state: AceState,
    committee: &CommitteeConfig,
    policy: &EpisodePolicy,
    deps: &EpisodeDeps<'_>,
) -> Result<(AceState, RoundTrace), StepError> {
    let round = state.round();
    if state.is_done() {
        return Err(step_err(round, RoundError::BudgetExhausted(state.budget)));
    }

    let (action, votes) = match policy.override_for(round) {
        Some(action) => (action, Vec::new()),
        None => {
            let votes = collect_votes(deps.backend, deps.prompts, &state.memory, &state.question, committee)
                .map_err(|e| match e {
                    CommitteeError::Agent {
                        agent_id,
                        source,
                        partial_votes,
                    } => StepError {
                        round,
                        usage: partial_votes.iter().map(|v| v.usage).sum(),
                        votes: partial_votes.clone(),
                        source: RoundError::Committee(CommitteeError::Agent {
                            agent_id,
                            source,
                            partial_votes,
                        }),
                    },
                    other => step_err(round, other),
                })?;
            let action = majority_vote(&votes, committee.tie_break).map_err(|e| step_err(round, e))?;
            (action, votes)
        }
    };
    let vote_usage: TokenUsage = votes.iter().map(|v| v.usage).sum();
    let fail = |source: RoundError| StepError {
        round,
        source,
        usage: vote_usage,
        votes: votes.clone(),
    };

    let inserted_round = round + 1;
    let (new_items, query, action_usage) = match action {
        Action::Retrieve => {
            let query = formulate_query(&state.memory, &state.question);
            let request = RetrievalRequest::new(query.clone(), deps.top_k).map_err(|e| fail(e.into()))?;
            let passages = deps.retriever.retrieve(&request).map_err(|e| fail(e.into()))?;
            let items: Vec<MemoryItem> = passages
                .into_iter()
                .map(|p| MemoryItem::passage(p, inserted_round))
                .collect();
            (items, Some(query), TokenUsage::ZERO)
        }
        Action::Think => {
            let outcome = think(deps.backend, deps.prompts, &state.memory, &state.question, &deps.generation)
                .map_err(|e| fail(e.into()))?;
            (vec![MemoryItem::thought(outcome.thought, inserted_round)], None, outcome.usage)
        }
    };

    let items_produced = new_items.len();
    let (memory, inserted) = state.memory.union_insert(new_items);
    let items_added = memory.items()[memory.len() - inserted..]
        .iter()
        .map(|item| item.content().summary())
        .collect();

    let mut actions_taken = state.actions_taken;
    actions_taken.push(action);
    let next = AceState {
        memory,
        actions_taken,
        ..state
    };
    let trace = RoundTrace {
        round,
        votes,
        action,
        query,
        items_added,
        items_produced,
        usage: vote_usage + action_usage,
    };
    Ok((next, trace))
}

/// Runs `n_rounds` rounds then answers. `n_rounds == 0` answers straight from
/// the question (the no-retrieval baseline).
pub fn run_episode(
    question: &str,
    n_rounds: usize,
    committee: &CommitteeConfig,
    policy: &EpisodePolicy,
    deps: &EpisodeDeps<'_>,
) -> Result<EpisodeResult, EpisodeError> {
    run_episode_with(question, n_rounds, committee, policy, deps, |_| {})
}

/// As [`run_episode`], calling `observe` with the memory after every round.
pub fn run_episode_with(
    question: &str,
    n_rounds: usize,
    committee: &CommitteeConfig,
    policy: &EpisodePolicy,
    deps: &EpisodeDeps<'_>,
    mut observe: impl FnMut(&WorkingMemory),
) -> Result<EpisodeResult, EpisodeError> {
    let mut result = EpisodeResult::empty(question.trim());
    let abort = |mut result: EpisodeResult, source: RoundError, aborted: Aborted| {
        result.aborted = Some(aborted);
        result.recount();
        EpisodeError {
            source,
            partial: Box::new(result),
        }
    };
    let setup_abort = |result: EpisodeResult, source: RoundError| {
        let message = source.to_string();
        abort(
            result,
            source,
            Aborted {
                round: 0,
                message,
                usage: TokenUsage::ZERO,
                votes: Vec::new(),
            },
        )
    };

    if let PolicyMode::FixedSchedule(s) = &policy.mode {
        if s.len() != n_rounds {
            return Err(setup_abort(
                result,
                RoundError::ScheduleLength {
                    schedule: s.len(),
                    budget: n_rounds,
                },
            ));
        }
    }
    if let Err(e) = committee.validate() {
        return Err(setup_abort(result, e.into()));
    }
    let mut state = match AceState::new(question, n_rounds, committee.k) {
        Ok(s) => s,
        Err(e) => return Err(setup_abort(result, e.into())),
    };
    observe(&state.memory);

    while !state.is_done() {
        match step(state, committee, policy, deps) {
            Ok((next, trace)) => {
                let stalled = trace.items_added.is_empty();
                result.rounds.push(trace);
                state = next;
                observe(&state.memory);
                if policy.early_stop && stalled {
                    break;
                }
            }
            Err(e) => {
                let aborted = Aborted {
                    round: e.round,
                    message: e.source.to_string(),
                    usage: e.usage,
                    votes: e.votes,
                };
                return Err(abort(result, e.source, aborted));
            }
        }
    }

    match answer(deps.backend, deps.prompts, &state.memory, &state.question, &deps.generation) {
        Ok(a) => {
            result.answer = a;
            result.recount();
            Ok(result)
        }
        Err(e) => {
            let source = RoundError::from(e);
            let aborted = Aborted {
                round: state.round(),
                message: source.to_string(),
                usage: TokenUsage::ZERO,
                votes: Vec::new(),
            };
            Err(abort(result, source, aborted))
        }
    }
}

/// Single-step retrieve-then-answer pipeline, built without the round loop.
pub fn run_rag(question: &str, deps: &EpisodeDeps<'_>) -> Result<EpisodeResult, RoundError> {
    let memory = WorkingMemory::init(question)?;
    let question = memory.question().unwrap_or_default().to_string();
    let query = formulate_query(&memory, &question);
    let passages = deps
        .retriever
        .retrieve(&RetrievalRequest::new(query.clone(), deps.top_k)?)?;
    let produced = passages.len();
    let (memory, inserted) = memory.union_insert(passages.into_iter().map(|p| MemoryItem::passage(p, 1)));
    let final_answer = answer(deps.backend, deps.prompts, &memory, &question, &deps.generation)?;
    let round = RoundTrace {
        round: 0,
        votes: Vec::new(),
        action: Action::Retrieve,
        query: Some(query),
        items_added: memory.items()[memory.len() - inserted..]
            .iter()
            .map(|i| i.content().summary())
            .collect(),
        items_produced: produced,
        usage: TokenUsage::ZERO,
    };
    Ok(EpisodeResult {
        episode_id: String::new(),
        question,
        total_usage: final_answer.usage,
        answer: final_answer,
        rounds: vec![round],
        think_count: 0,
        retrieve_count: 1,
        aborted: None,
    })
}

/// Direct answer from the bare question; no retrieval.
pub fn run_vanilla(question: &str, deps: &EpisodeDeps<'_>) -> Result<EpisodeResult, RoundError> {
    let memory = WorkingMemory::init(question)?;
    let question = memory.question().unwrap_or_default().to_string();
    let final_answer = answer(deps.backend, deps.prompts, &memory, &question, &deps.generation)?;
    Ok(EpisodeResult {
        episode_id: String::new(),
        question,
        total_usage: final_answer.usage,
        answer: final_answer,
        rounds: Vec::new(),
        think_count: 0,
        retrieve_count: 0,
        aborted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CallTag, ScriptedBackend, ScriptedRule, ScriptedRuleSet};
    use crate::committee::{majority_of, TieBreak};
    use crate::retriever::{Bm25Retriever, Corpus, CountingRetriever};

    const R: Action = Action::Retrieve;
    const T: Action = Action::Think;

    fn corpus() -> Corpus {
        let src = [
            r#"{"doc_id":"d1","title":"Inception","text":"Inception is a 2010 film directed by Christopher Nolan."}"#,
            r#"{"doc_id":"d2","title":"Christopher Nolan","text":"Christopher Nolan was born in London in 1970."}"#,
            r#"{"doc_id":"d3","title":"Paris","text":"Paris is the capital of France."}"#,
            r#"{"doc_id":"d4","title":"London","text":"London is the capital of England."}"#,
        ]
        .join("\n");
        Corpus::ingest(src.as_bytes()).unwrap()
    }

    fn retriever() -> CountingRetriever<Bm25Retriever> {
        CountingRetriever::new(Bm25Retriever::build(corpus(), 1.2, 0.75).unwrap())
    }

    fn backend(decisions: &[&str]) -> ScriptedBackend {
        let mut rules: Vec<ScriptedRule> = decisions
            .iter()
            .enumerate()
            .map(|(seed, d)| ScriptedRule::new(CallTag::Decide, "", d).with_seed(seed as u64))
            .collect();
        rules.push(ScriptedRule::new(CallTag::SubQuery, "", "When was Nolan born?"));
        rules.push(ScriptedRule::new(CallTag::SubAnswer, "", "1970"));
        rules.push(ScriptedRule::new(CallTag::FinalAnswer, "", "Christopher Nolan"));
        ScriptedBackend::new(ScriptedRuleSet::new(rules, "THINK"))
    }

    fn deps<'a>(b: &'a ScriptedBackend, r: &'a dyn Retriever, prompts: &'a PromptSet) -> EpisodeDeps<'a> {
        EpisodeDeps {
            backend: b,
            retriever: r,
            prompts,
            top_k: 2,
            generation: GenerationParams::default(),
        }
    }

    #[test]
    fn n1_vote_mode_is_single_retrieve() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let res = run_episode("Who directed Inception?", 1, &CommitteeConfig::default(), &EpisodePolicy::default(), &deps(&b, &r, &p))
            .unwrap();
        assert_eq!(res.actions(), [R]);
        assert!(res.rounds[0].votes.is_empty());
        assert_eq!(res.think_percent(), 0.0);
        assert_eq!(b.requests_with_tag(CallTag::Decide).len(), 0);
        assert_eq!(r.calls(), 1);
    }

    #[test]
    fn n1_matches_rag_pipeline() {
        let p = PromptSet::default();
        let b1 = backend(&[]);
        let r1 = retriever();
        let ace = run_episode("Who directed Inception?", 1, &CommitteeConfig::default(), &EpisodePolicy::default(), &deps(&b1, &r1, &p))
            .unwrap();
        let b2 = backend(&[]);
        let r2 = retriever();
        let rag = run_rag("Who directed Inception?", &deps(&b2, &r2, &p)).unwrap();
        assert_eq!(ace.answer, rag.answer);
        assert_eq!(ace.total_usage, rag.total_usage);
        assert_eq!(b1.requests(), b2.requests());
    }

    #[test]
    fn fixed_schedule_passthrough() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let policy = EpisodePolicy::new(PolicyMode::FixedSchedule(vec![R, T, T, R]));
        let res = run_episode("Who directed Inception?", 4, &CommitteeConfig::default(), &policy, &deps(&b, &r, &p)).unwrap();
        assert_eq!(res.actions(), [R, T, T, R]);
        assert_eq!(res.think_count, 2);
        // second THINK duplicates the first thought pair
        assert_eq!(res.rounds[1].items_added.len(), 1);
        assert!(res.rounds[2].items_added.is_empty());
        assert_eq!(res.rounds[2].items_produced, 1);
    }

    #[test]
    fn schedule_length_must_match() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let policy = EpisodePolicy::new(PolicyMode::FixedSchedule(vec![R]));
        let err = run_episode("Q", 2, &CommitteeConfig::default(), &policy, &deps(&b, &r, &p)).unwrap_err();
        assert!(matches!(err.source, RoundError::ScheduleLength { .. }));
    }

    #[test]
    fn vote_round_follows_majority() {
        let b = backend(&["RETRIEVE", "RETRIEVE", "RETRIEVE", "THINK", "THINK"]);
        let r = retriever();
        let p = PromptSet::default();
        let state = AceState::new("Who directed Inception?", 3, 5).unwrap();
        let policy = EpisodePolicy::default().with_force_first_retrieve(false);
        let (next, trace) = step(state, &CommitteeConfig::default(), &policy, &deps(&b, &r, &p)).unwrap();
        assert_eq!(trace.action, R);
        assert_eq!(trace.votes.len(), 5);
        assert_eq!(
            majority_of(trace.votes.iter().map(|v| v.action), TieBreak::Retrieve).unwrap(),
            trace.action
        );
        assert!(next.memory.len() - 1 <= 2);
        assert_eq!(next.round(), 1);
    }

    #[test]
    fn always_think_skips_votes_and_retriever() {
        let b = backend(&["RETRIEVE"; 5]);
        let r = retriever();
        let p = PromptSet::default();
        let policy = EpisodePolicy::new(PolicyMode::AlwaysThink).with_force_first_retrieve(false);
        let res = run_episode("Q", 3, &CommitteeConfig::default(), &policy, &deps(&b, &r, &p)).unwrap();
        assert_eq!(res.actions(), [T, T, T]);
        assert_eq!(r.calls(), 0);
        assert!(b.requests_with_tag(CallTag::Decide).is_empty());
    }

    #[test]
    fn step_refuses_past_budget() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let state = AceState::new("Q", 0, 5).unwrap();
        let err = step(state, &CommitteeConfig::default(), &EpisodePolicy::default(), &deps(&b, &r, &p)).unwrap_err();
        assert!(matches!(err.source, RoundError::BudgetExhausted(0)));
    }

    #[test]
    fn vanilla_has_no_rounds() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let res = run_episode("Q", 0, &CommitteeConfig::default(), &EpisodePolicy::default(), &deps(&b, &r, &p)).unwrap();
        assert!(res.rounds.is_empty());
        assert_eq!(r.calls(), 0);
        let v = run_vanilla("Q", &deps(&b, &r, &p)).unwrap();
        assert_eq!(v.answer, res.answer);
    }

    #[test]
    fn failure_keeps_partial_trace_and_tokens() {
        // sub-query blank -> THINK fails in round 1
        let rules = ScriptedRuleSet::new(
            vec![
                ScriptedRule::new(CallTag::Decide, "", "THINK").with_usage(5, 1),
                ScriptedRule::new(CallTag::SubQuery, "", " "),
            ],
            "x",
        );
        let b = ScriptedBackend::new(rules);
        let r = retriever();
        let p = PromptSet::default();
        let err = run_episode("Q capital", 3, &CommitteeConfig::default(), &EpisodePolicy::default(), &deps(&b, &r, &p))
            .unwrap_err();
        assert!(matches!(err.source, RoundError::Reasoner(ReasonerError::EmptySubQuery)));
        let partial = err.partial;
        assert_eq!(partial.rounds.len(), 1);
        let aborted = partial.aborted.as_ref().unwrap();
        assert_eq!(aborted.round, 1);
        assert_eq!(aborted.votes.len(), 5);
        assert_eq!(partial.total_usage.total(), 30);
    }

    #[test]
    fn early_stop_on_stalled_round() {
        let b = backend(&[]);
        let r = retriever();
        let p = PromptSet::default();
        let mut policy = EpisodePolicy::new(PolicyMode::AlwaysRetrieve);
        policy.early_stop = true;
        let res = run_episode("Who directed Inception?", 5, &CommitteeConfig::default(), &policy, &deps(&b, &r, &p)).unwrap();
        // second retrieval repeats the same query and adds nothing
        assert_eq!(res.rounds.len(), 2);
    }

    #[test]
    fn policy_parse() {
        assert_eq!(PolicyMode::parse("always_retrieve").unwrap(), PolicyMode::AlwaysRetrieve);
        assert_eq!(PolicyMode::parse("schedule:R,T").unwrap(), PolicyMode::FixedSchedule(vec![R, T]));
        assert_eq!(PolicyMode::FixedSchedule(vec![R, T]).label(), "schedule:R,T");
        assert!(PolicyMode::parse("schedule:R,X").is_err());
        assert!(PolicyMode::parse("random").is_err());
    }
}
