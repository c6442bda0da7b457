//! Corpus ingestion, BM25 retrieval and search-query formulation.

mod bm25;
mod corpus;

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{tokenize, Bm25Index, Posting, ScoredDoc, DEFAULT_B, DEFAULT_K1};
pub use corpus::{Corpus, Document};

use crate::memory::{Passage, WorkingMemory};
use crate::scalar::Score;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate doc_id `{doc_id}`{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicateId { doc_id: String, line: Option<usize> },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("query has no terms after tokenization")]
    EmptyQuery,
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("index does not match corpus: {0}")]
    CorruptIndex(String),
    #[error("unsupported index format `{0}`")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalRequest {
    pub query: String,
    pub top_k: usize,
}

impl RetrievalRequest {
    pub fn new(query: impl Into<String>, top_k: usize) -> Result<Self, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::ZeroTopK);
        }
        Ok(Self {
            query: query.into(),
            top_k,
        })
    }
}

/// Source of passages for RETRIEVE rounds. Must be safe to share across threads.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<Vec<Passage>, RetrievalError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<Vec<Passage>, RetrievalError> {
        (**self).retrieve(request)
    }
}

/// Search query for a RETRIEVE round: the question, followed by the sub-query
/// of the most recent thought pair when there is one.
pub fn formulate_query(memory: &WorkingMemory, question: &str) -> String {
    match memory.latest_thought() {
        Some(t) => format!("{question} {}", t.sub_query),
        None => question.to_string(),
    }
}

/// A corpus paired with the BM25 index built over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Score")]
pub struct Bm25Retriever<F: Score = f64> {
    corpus: Corpus,
    index: Bm25Index<F>,
}

pub const INDEX_FORMAT: &str = "ace-bm25/1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Score")]
struct IndexFile<F: Score> {
    format: String,
    #[serde(flatten)]
    body: Bm25Retriever<F>,
}

impl<F: Score> Bm25Retriever<F> {
    pub fn new(corpus: Corpus, index: Bm25Index<F>) -> Result<Self, RetrievalError> {
        if index.doc_count() != corpus.doc_count() {
            return Err(RetrievalError::CorruptIndex(format!(
                "index covers {} documents, corpus has {}",
                index.doc_count(),
                corpus.doc_count()
            )));
        }
        Ok(Self { corpus, index })
    }

    pub fn build(corpus: Corpus, k1: f64, b: f64) -> Result<Self, RetrievalError> {
        let index = Bm25Index::build_with(&corpus, k1, b)?;
        Ok(Self { corpus, index })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &Bm25Index<F> {
        &self.index
    }

    /// Writes corpus and index as one JSON document tagged `ace-bm25/1`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let out = IndexFile {
            format: INDEX_FORMAT.to_string(),
            body: self.clone(),
        };
        serde_json::to_writer(&mut w, &out)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| RetrievalError::Open {
            path: path.display().to_string(),
            source: e,
        })?;
        let parsed: IndexFile<F> = serde_json::from_reader(BufReader::new(file))?;
        if parsed.format != INDEX_FORMAT {
            return Err(RetrievalError::Format(parsed.format));
        }
        parsed.body.index.validate()?;
        Self::new(parsed.body.corpus, parsed.body.index)
    }
}

impl<F: Score> Retriever for Bm25Retriever<F> {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<Vec<Passage>, RetrievalError> {
        if request.top_k == 0 {
            return Err(RetrievalError::ZeroTopK);
        }
        let hits = self.index.search(&request.query, request.top_k)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let doc = &self.corpus.docs()[h.ordinal];
                Passage {
                    doc_id: doc.doc_id.clone(),
                    title: doc.title.clone(),
                    text: doc.text.clone(),
                    score: h.score.as_f64(),
                }
            })
            .collect())
    }
}

/// Wraps a retriever and counts lookups.
#[derive(Debug)]
pub struct CountingRetriever<R> {
    inner: R,
    calls: AtomicUsize,
}

impl<R> CountingRetriever<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

impl<R: Retriever> Retriever for CountingRetriever<R> {
    fn retrieve(&self, request: &RetrievalRequest) -> Result<Vec<Passage>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.retrieve(request)
    }
}
