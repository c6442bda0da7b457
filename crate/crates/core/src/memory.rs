//! Working memory for one episode.
//!
//! Memory is an insertion-ordered set of items: the original question,
//! retrieved passages and thought pairs. Identity is decided by a content key
//! derived from the item kind and its normalized text, so the same passage
//! retrieved twice (possibly at a different score) is stored once.
//!
//! Values are immutable; [`WorkingMemory::union_insert`] returns a new memory.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("cannot render an empty memory")]
    EmptyMemory,
}

/// The binary decision space of every round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Retrieve,
    Think,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Retrieve, Action::Think];

    pub fn label(self) -> &'static str {
        match self {
            Action::Retrieve => "RETRIEVE",
            Action::Think => "THINK",
        }
    }

    /// Parses `R`/`T` or the full label, case-insensitively.
    pub fn parse(s: &str) -> Option<Action> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R" | "RETRIEVE" => Some(Action::Retrieve),
            // REASON is an alias some reports use for THINK.
            "T" | "THINK" | "REASON" => Some(Action::Think),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    /// Retrieval score; kept for tracing, excluded from identity.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThoughtPair {
    pub sub_query: String,
    pub sub_answer: String,
}

impl ThoughtPair {
    pub fn new(sub_query: impl Into<String>, sub_answer: impl Into<String>) -> Self {
        Self {
            sub_query: sub_query.into(),
            sub_answer: sub_answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Query,
    Passage,
    Thought,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryContent {
    Query { text: String },
    Passage(Passage),
    Thought(ThoughtPair),
}

impl MemoryContent {
    pub fn kind(&self) -> ItemKind {
        match self {
            MemoryContent::Query { .. } => ItemKind::Query,
            MemoryContent::Passage(_) => ItemKind::Passage,
            MemoryContent::Thought(_) => ItemKind::Thought,
        }
    }

    /// Short one-line description used in traces.
    pub fn summary(&self) -> String {
        match self {
            MemoryContent::Query { text } => format!("query: {text}"),
            MemoryContent::Passage(p) => format!("passage {} ({:.4})", p.doc_id, p.score),
            MemoryContent::Thought(t) => format!("thought: {} => {}", t.sub_query, t.sub_answer),
        }
    }
}

/// SHA-256 of the item kind and its normalized text.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentKey([u8; 32]);

impl ContentKey {
    pub fn of(content: &MemoryContent) -> Self {
        let (tag, body) = match content {
            MemoryContent::Query { text } => ("query", normalize_text(text)),
            MemoryContent::Passage(p) => (
                "passage",
                format!("{}\u{1f}{}", normalize_text(&p.title), normalize_text(&p.text)),
            ),
            MemoryContent::Thought(t) => (
                "thought",
                format!(
                    "{}\u{1f}{}",
                    normalize_text(&t.sub_query),
                    normalize_text(&t.sub_answer)
                ),
            ),
        };
        let mut hasher = Sha256::new();
        hasher.update(tag.as_bytes());
        hasher.update([0u8]);
        hasher.update(body.as_bytes());
        ContentKey(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentKey({})", &self.to_hex()[..16])
    }
}

/// Trim, collapse internal whitespace, casefold.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryItem {
    content: MemoryContent,
    inserted_round: usize,
    key: ContentKey,
}

impl MemoryItem {
    pub fn new(content: MemoryContent, inserted_round: usize) -> Self {
        let key = ContentKey::of(&content);
        Self {
            content,
            inserted_round,
            key,
        }
    }

    pub fn passage(passage: Passage, round: usize) -> Self {
        Self::new(MemoryContent::Passage(passage), round)
    }

    pub fn thought(thought: ThoughtPair, round: usize) -> Self {
        Self::new(MemoryContent::Thought(thought), round)
    }

    pub fn kind(&self) -> ItemKind {
        self.content.kind()
    }

    pub fn content(&self) -> &MemoryContent {
        &self.content
    }

    pub fn inserted_round(&self) -> usize {
        self.inserted_round
    }

    pub fn content_key(&self) -> ContentKey {
        self.key
    }
}

/// Section labels used by [`WorkingMemory::render`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderConfig {
    pub question_label: String,
    pub context_label: String,
    pub thoughts_label: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            question_label: "Question:".into(),
            context_label: "Context:".into(),
            thoughts_label: "Sub-queries answered:".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkingMemory {
    items: Vec<MemoryItem>,
    keys: HashSet<ContentKey>,
}

impl WorkingMemory {
    /// Memory holding only the (trimmed) question.
    pub fn init(question: &str) -> Result<Self, MemoryError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(MemoryError::EmptyQuestion);
        }
        let item = MemoryItem::new(
            MemoryContent::Query {
                text: question.to_string(),
            },
            0,
        );
        let keys = HashSet::from([item.key]);
        Ok(Self {
            items: vec![item],
            keys,
        })
    }

    /// Set union preserving order. Returns the new memory and how many items
    /// were actually added.
    pub fn union_insert<I>(&self, new_items: I) -> (WorkingMemory, usize)
    where
        I: IntoIterator<Item = MemoryItem>,
    {
        let mut next = self.clone();
        let mut inserted = 0;
        for item in new_items {
            if next.keys.insert(item.key) {
                next.items.push(item);
                inserted += 1;
            }
        }
        (next, inserted)
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, key: &ContentKey) -> bool {
        self.keys.contains(key)
    }

    pub fn question(&self) -> Option<&str> {
        self.items.iter().find_map(|item| match &item.content {
            MemoryContent::Query { text } => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.items.iter().filter_map(|item| match &item.content {
            MemoryContent::Passage(p) => Some(p),
            _ => None,
        })
    }

    pub fn thoughts(&self) -> impl Iterator<Item = &ThoughtPair> {
        self.items.iter().filter_map(|item| match &item.content {
            MemoryContent::Thought(t) => Some(t),
            _ => None,
        })
    }

    /// Most recently inserted thought pair, if any.
    pub fn latest_thought(&self) -> Option<&ThoughtPair> {
        self.thoughts().last()
    }

    /// Prompt text: question block, then passages, then thought pairs, each
    /// in insertion order. Empty sections are omitted.
    pub fn render(&self, labels: &RenderConfig) -> Result<String, MemoryError> {
        if self.items.is_empty() {
            return Err(MemoryError::EmptyMemory);
        }
        let mut out = String::new();
        if let Some(q) = self.question() {
            let _ = write!(out, "{} {}", labels.question_label, q);
        }

        let mut passages = self.passages().peekable();
        if passages.peek().is_some() {
            push_section(&mut out, &labels.context_label);
            for (i, p) in passages.enumerate() {
                if p.title.is_empty() {
                    let _ = write!(out, "\n[{}] {}", i + 1, p.text);
                } else {
                    let _ = write!(out, "\n[{}] {}: {}", i + 1, p.title, p.text);
                }
            }
        }

        let mut thoughts = self.thoughts().peekable();
        if thoughts.peek().is_some() {
            push_section(&mut out, &labels.thoughts_label);
            for t in thoughts {
                let _ = write!(out, "\nQ: {}\nA: {}", t.sub_query, t.sub_answer);
            }
        }
        Ok(out)
    }
}

fn push_section(out: &mut String, label: &str) {
    if !out.is_empty() {
        out.push_str("\n\n");
    }
    out.push_str(label);
}

/// Per-episode state threaded through the round loop.
#[derive(Debug, Clone)]
pub struct AceState {
    pub memory: WorkingMemory,
    pub question: String,
    pub budget: usize,
    pub committee_size: usize,
    pub actions_taken: Vec<Action>,
}

impl AceState {
    pub fn new(question: &str, budget: usize, committee_size: usize) -> Result<Self, MemoryError> {
        let memory = WorkingMemory::init(question)?;
        let question = memory.question().unwrap_or_default().to_string();
        Ok(Self {
            memory,
            question,
            budget,
            committee_size,
            actions_taken: Vec::new(),
        })
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.actions_taken.len()
    }

    pub fn is_done(&self) -> bool {
        self.round() >= self.budget
    }
}
