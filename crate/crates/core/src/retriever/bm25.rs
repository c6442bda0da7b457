//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring. The `+1` inside the log keeps
//! every idf positive, so a document scores above zero iff it shares a term
//! with the query.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, RetrievalError};
use crate::scalar::Score;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Lowercase, drop every character that is neither alphanumeric nor
/// whitespace, split on whitespace. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Score")]
pub struct Bm25Index<F: Score = f64> {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: F,
    k1: F,
    b: F,
}

/// A scored document ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc<F> {
    pub ordinal: usize,
    pub score: F,
}

/// Title and body are indexed together.
pub(crate) fn doc_text(title: &str, text: &str) -> String {
    if title.is_empty() {
        text.to_string()
    } else {
        format!("{title} {text}")
    }
}

impl<F: Score> Bm25Index<F> {
    pub fn build(corpus: &Corpus) -> Result<Self, RetrievalError> {
        Self::build_with(corpus, DEFAULT_K1, DEFAULT_B)
    }

    pub fn build_with(corpus: &Corpus, k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if !(k1 > 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::InvalidParams { k1, b });
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.doc_count());
        for (ordinal, doc) in corpus.docs().iter().enumerate() {
            let tokens = tokenize(&doc_text(&doc.title, &doc.text));
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length =
            F::from_u64(total).expect("length fits float") / F::from_count(doc_lengths.len());
        Ok(Self {
            postings,
            doc_lengths,
            avg_doc_length,
            k1: F::from_param(k1),
            b: F::from_param(b),
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> F {
        self.avg_doc_length
    }

    pub fn k1(&self) -> F {
        self.k1
    }

    pub fn b(&self) -> F {
        self.b
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> F {
        let n = F::from_count(self.doc_count());
        let df = F::from_count(self.postings(term).len());
        let half = F::from_param(0.5);
        (F::one() + (n - df + half) / (df + half)).ln()
    }

    /// Checks the structural invariants; used after deserializing.
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let n = self.doc_count();
        let bad = |msg: String| RetrievalError::CorruptIndex(msg);
        if n == 0 {
            return Err(bad("index has no documents".into()));
        }
        for (term, list) in &self.postings {
            if list.iter().any(|p| p.doc as usize >= n || p.tf == 0) {
                return Err(bad(format!("posting for `{term}` out of range")));
            }
        }
        let total: u64 = self.doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let mean = total as f64 / n as f64;
        if (self.avg_doc_length.as_f64() - mean).abs() > 1e-6 * mean.max(1.0) {
            return Err(bad("average document length mismatch".into()));
        }
        // Written as a positive range check so NaN parameters are rejected too.
        let params_ok = self.k1 > F::zero() && self.b >= F::zero() && self.b <= F::one();
        if !params_ok {
            return Err(bad("invalid k1/b".into()));
        }
        Ok(())
    }

    /// Top-`top_k` documents by descending score, ties by ascending ordinal.
    /// Documents scoring zero are excluded.
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredDoc<F>>, RetrievalError> {
        let terms = tokenize(query);
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let mut seen = HashSet::new();
        let mut scores = vec![F::zero(); self.doc_count()];
        let one = F::one();
        for term in terms.iter().filter(|t| seen.insert(t.as_str())) {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let tf = F::from_u32(p.tf).expect("tf fits float");
                let len = F::from_u32(self.doc_lengths[p.doc as usize]).expect("len fits float");
                let norm = one - self.b + self.b * len / self.avg_doc_length;
                scores[p.doc as usize] =
                    scores[p.doc as usize] + idf * tf * (self.k1 + one) / (tf + self.k1 * norm);
            }
        }
        let mut hits: Vec<ScoredDoc<F>> = scores
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s > F::zero())
            .map(|(ordinal, score)| ScoredDoc { ordinal, score })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.ordinal.cmp(&b.ordinal))
        });
        hits.truncate(top_k);
        Ok(hits)
    }
}
