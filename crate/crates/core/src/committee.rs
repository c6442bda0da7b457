//! Committee of k agents voting RETRIEVE or THINK each round.
//!
//! Each agent is one sample from the shared backend with its own seed. Votes
//! are collected concurrently and reduced by simple majority.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CallTag, CompletionRequest, LlmBackend, TokenUsage};
use crate::memory::{Action, MemoryError, WorkingMemory};
use crate::prompts::{fill, PromptSet, PH_MEMORY, PH_QUESTION};

#[derive(Debug, Error)]
pub enum CommitteeError {
    #[error("no votes to aggregate")]
    NoVotes,
    #[error("committee size must be at least 1")]
    EmptyCommittee,
    #[error("expected {expected} agent seeds, got {got}")]
    SeedCount { expected: usize, got: usize },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("agent {agent_id} failed: {source}")]
    Agent {
        agent_id: usize,
        #[source]
        source: BackendError,
        /// Votes from agents that did succeed, for tracing.
        partial_votes: Vec<Vote>,
    },
}

/// Which action wins an exact tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    Retrieve,
    Think,
}

impl TieBreak {
    pub fn action(self) -> Action {
        match self {
            TieBreak::Retrieve => Action::Retrieve,
            TieBreak::Think => Action::Think,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub agent_id: usize,
    pub action: Action,
    /// False when the response named both actions or neither and the
    /// default was applied.
    pub parsed: bool,
    pub raw_response: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeConfig {
    pub k: usize,
    pub temperature: f64,
    pub agent_seeds: Vec<u64>,
    pub tie_break: TieBreak,
    pub max_tokens: u32,
}

impl CommitteeConfig {
    /// `k` agents seeded `base_seed, base_seed + 1, ...`.
    pub fn new(k: usize, temperature: f64, base_seed: u64) -> Self {
        Self {
            k,
            temperature,
            agent_seeds: (0..k as u64).map(|i| base_seed.wrapping_add(i)).collect(),
            tie_break: TieBreak::default(),
            max_tokens: 16,
        }
    }

    pub fn validate(&self) -> Result<(), CommitteeError> {
        if self.k == 0 {
            return Err(CommitteeError::EmptyCommittee);
        }
        if self.agent_seeds.len() != self.k {
            return Err(CommitteeError::SeedCount {
                expected: self.k,
                got: self.agent_seeds.len(),
            });
        }
        Ok(())
    }
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self::new(5, 0.7, 0)
    }
}

/// Reads an action out of a free-text reply.
///
/// Case-insensitive scan for the whole words `RETRIEVE` and `THINK`. Exactly
/// one present decides the vote; both or neither yields `(Retrieve, false)`.
pub fn parse_decision(response: &str) -> (Action, bool) {
    let mut saw_retrieve = false;
    let mut saw_think = false;
    for word in response.split(|c: char| !c.is_alphanumeric()) {
        if word.eq_ignore_ascii_case("retrieve") {
            saw_retrieve = true;
        } else if word.eq_ignore_ascii_case("think") {
            saw_think = true;
        }
    }
    match (saw_retrieve, saw_think) {
        (true, false) => (Action::Retrieve, true),
        (false, true) => (Action::Think, true),
        _ => (Action::Retrieve, false),
    }
}

pub fn decision_prompt(prompts: &PromptSet, memory: &WorkingMemory, question: &str) -> Result<String, MemoryError> {
    let rendered = memory.render(&prompts.render)?;
    Ok(fill(&prompts.decide, &[(PH_QUESTION, question), (PH_MEMORY, &rendered)]))
}

fn vote_with_prompt(
    backend: &dyn LlmBackend,
    prompt: &str,
    agent_id: usize,
    config: &CommitteeConfig,
) -> Result<Vote, BackendError> {
    let request = CompletionRequest::new(CallTag::Decide, prompt)
        .with_seed(config.agent_seeds[agent_id])
        .with_temperature(config.temperature)
        .with_max_tokens(config.max_tokens);
    let completion = backend.complete(&request)?;
    let (action, parsed) = parse_decision(&completion.text);
    if !parsed {
        log::debug!("agent {agent_id}: unparsed decision {:?}", completion.text);
    }
    Ok(Vote {
        agent_id,
        action,
        parsed,
        raw_response: completion.text,
        usage: completion.usage,
    })
}

/// One agent's ballot.
pub fn agent_vote(
    backend: &dyn LlmBackend,
    prompts: &PromptSet,
    memory: &WorkingMemory,
    question: &str,
    agent_id: usize,
    config: &CommitteeConfig,
) -> Result<Vote, CommitteeError> {
    config.validate()?;
    if agent_id >= config.k {
        return Err(CommitteeError::SeedCount {
            expected: config.k,
            got: agent_id + 1,
        });
    }
    let prompt = decision_prompt(prompts, memory, question)?;
    vote_with_prompt(backend, &prompt, agent_id, config).map_err(|source| CommitteeError::Agent {
        agent_id,
        source,
        partial_votes: Vec::new(),
    })
}

/// All k ballots, ordered by agent id. Calls run concurrently; this returns
/// only after every agent has answered.
pub fn collect_votes(
    backend: &dyn LlmBackend,
    prompts: &PromptSet,
    memory: &WorkingMemory,
    question: &str,
    config: &CommitteeConfig,
) -> Result<Vec<Vote>, CommitteeError> {
    config.validate()?;
    let prompt = decision_prompt(prompts, memory, question)?;
    let results: Vec<Result<Vote, BackendError>> = if config.k == 1 {
        vec![vote_with_prompt(backend, &prompt, 0, config)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.k)
                .map(|id| {
                    let prompt = prompt.as_str();
                    scope.spawn(move || vote_with_prompt(backend, prompt, id, config))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("vote worker panicked"))
                .collect()
        })
    };

    let mut votes = Vec::with_capacity(config.k);
    let mut failure = None;
    for (agent_id, result) in results.into_iter().enumerate() {
        match result {
            Ok(v) => votes.push(v),
            Err(e) if failure.is_none() => failure = Some((agent_id, e)),
            Err(_) => {}
        }
    }
    match failure {
        None => Ok(votes),
        Some((agent_id, source)) => Err(CommitteeError::Agent {
            agent_id,
            source,
            partial_votes: votes,
        }),
    }
}

/// Action with the strictly larger count; ties go to `tie_break`.
pub fn majority_vote(votes: &[Vote], tie_break: TieBreak) -> Result<Action, CommitteeError> {
    majority_of(votes.iter().map(|v| v.action), tie_break)
}

pub fn majority_of<I>(actions: I, tie_break: TieBreak) -> Result<Action, CommitteeError>
where
    I: IntoIterator<Item = Action>,
{
    let (mut retrieve, mut think) = (0usize, 0usize);
    for a in actions {
        match a {
            Action::Retrieve => retrieve += 1,
            Action::Think => think += 1,
        }
    }
    if retrieve + think == 0 {
        return Err(CommitteeError::NoVotes);
    }
    Ok(match retrieve.cmp(&think) {
        std::cmp::Ordering::Greater => Action::Retrieve,
        std::cmp::Ordering::Less => Action::Think,
        std::cmp::Ordering::Equal => tie_break.action(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedRule, ScriptedRuleSet};
    use proptest::prelude::*;

    fn ballot(actions: &[Action]) -> Vec<Vote> {
        actions
            .iter()
            .enumerate()
            .map(|(i, &action)| Vote {
                agent_id: i,
                action,
                parsed: true,
                raw_response: action.label().into(),
                usage: TokenUsage::ZERO,
            })
            .collect()
    }

    const R: Action = Action::Retrieve;
    const T: Action = Action::Think;

    #[test]
    fn majority_examples() {
        let tb = TieBreak::Retrieve;
        assert_eq!(majority_vote(&ballot(&[R, R, R, R, R]), tb).unwrap(), R);
        assert_eq!(majority_vote(&ballot(&[T, T, R, T, R]), tb).unwrap(), T);
        assert_eq!(majority_vote(&ballot(&[T, R]), tb).unwrap(), R);
        assert_eq!(majority_vote(&ballot(&[T, R]), TieBreak::Think).unwrap(), T);
        assert!(matches!(majority_vote(&[], tb), Err(CommitteeError::NoVotes)));
    }

    #[test]
    fn parse_keywords() {
        assert_eq!(parse_decision("THINK: what year was X born"), (T, true));
        assert_eq!(parse_decision("(2) RETRIEVE"), (R, true));
        assert_eq!(parse_decision("retrieve."), (R, true));
        assert_eq!(parse_decision("unsure"), (R, false));
        assert_eq!(parse_decision("THINK or RETRIEVE"), (R, false));
        assert_eq!(parse_decision("Rethinking..."), (R, false));
    }

    #[test]
    fn collect_orders_by_agent_and_uses_distinct_seeds() {
        let rules = ScriptedRuleSet::new(
            vec![
                ScriptedRule::new(CallTag::Decide, "", "THINK").with_seed(0),
                ScriptedRule::new(CallTag::Decide, "", "THINK").with_seed(1),
                ScriptedRule::new(CallTag::Decide, "", "THINK").with_seed(2),
            ],
            "RETRIEVE",
        );
        let backend = ScriptedBackend::new(rules);
        let memory = WorkingMemory::init("Q").unwrap();
        let cfg = CommitteeConfig::new(5, 0.7, 0);
        let votes = collect_votes(&backend, &PromptSet::default(), &memory, "Q", &cfg).unwrap();
        let ids: Vec<_> = votes.iter().map(|v| v.agent_id).collect();
        assert_eq!(ids, [0, 1, 2, 3, 4]);
        let acts: Vec<_> = votes.iter().map(|v| v.action).collect();
        assert_eq!(acts, [T, T, T, R, R]);
        let mut seeds: Vec<_> = backend.requests().iter().map(|r| r.seed).collect();
        seeds.sort();
        assert_eq!(seeds, [0, 1, 2, 3, 4]);
        assert_eq!(majority_vote(&votes, TieBreak::Retrieve).unwrap(), T);
    }

    #[test]
    fn single_agent_committee() {
        let backend = ScriptedBackend::new(ScriptedRuleSet::new(vec![], "THINK"));
        let memory = WorkingMemory::init("Q").unwrap();
        let cfg = CommitteeConfig::new(1, 0.0, 7);
        let votes = collect_votes(&backend, &PromptSet::default(), &memory, "Q", &cfg).unwrap();
        assert_eq!(votes.len(), 1);
        assert_eq!(backend.requests()[0].seed, 7);
        assert_eq!(majority_vote(&votes, TieBreak::Retrieve).unwrap(), T);
    }

    #[test]
    fn agent_vote_prompt_substitutes_question_and_memory() {
        let backend = ScriptedBackend::new(ScriptedRuleSet::new(vec![], "(2) RETRIEVE"));
        let memory = WorkingMemory::init("Who directed Inception?").unwrap();
        let cfg = CommitteeConfig::default();
        let v = agent_vote(&backend, &PromptSet::default(), &memory, "Who directed Inception?", 3, &cfg)
            .unwrap();
        assert_eq!((v.agent_id, v.action, v.parsed), (3, R, true));
        let prompt = &backend.requests()[0].prompt;
        assert!(prompt.contains("original question Who directed Inception?,"));
        assert!(prompt.contains("sub-queries Question: Who directed Inception?,"));
        assert_eq!(backend.requests()[0].seed, 3);
    }

    #[test]
    fn invalid_config() {
        let mut cfg = CommitteeConfig::new(0, 0.0, 0);
        assert!(matches!(cfg.validate(), Err(CommitteeError::EmptyCommittee)));
        cfg = CommitteeConfig::new(3, 0.0, 0);
        cfg.agent_seeds.pop();
        assert!(matches!(cfg.validate(), Err(CommitteeError::SeedCount { .. })));
    }

    fn action_strategy() -> impl Strategy<Value = Action> {
        prop_oneof![Just(R), Just(T)]
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut acts in prop::collection::vec(action_strategy(), 1..12), seed in any::<u64>()) {
            let before = majority_of(acts.iter().copied(), TieBreak::Retrieve).unwrap();
            // deterministic shuffle
            let n = acts.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                acts.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(majority_of(acts, TieBreak::Retrieve).unwrap(), before);
        }

        #[test]
        fn think_to_retrieve_never_flips_to_think(acts in prop::collection::vec(action_strategy(), 1..12), idx in any::<prop::sample::Index>()) {
            let before = majority_of(acts.iter().copied(), TieBreak::Retrieve).unwrap();
            let mut changed = acts.clone();
            let i = idx.index(changed.len());
            if changed[i] == T {
                changed[i] = R;
                let after = majority_of(changed, TieBreak::Retrieve).unwrap();
                if before == R {
                    prop_assert_eq!(after, R);
                }
            }
        }

        #[test]
        fn unanimity(a in action_strategy(), n in 1usize..10) {
            prop_assert_eq!(majority_of(std::iter::repeat_n(a, n), TieBreak::Think).unwrap(), a);
        }
    }
}
