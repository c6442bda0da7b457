//! Shared helpers for integration tests: an independent BM25 oracle and
//! scripted-backend fixtures.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use ace_core::backend::{CallTag, ScriptedBackend, ScriptedRule, ScriptedRuleSet};
use ace_core::retriever::{Corpus, Document};

/// Brute-force BM25: every document is re-tokenized and scored from scratch
/// against the unique query terms, no inverted index involved.
pub fn oracle_bm25(docs: &[String], query: &str, k1: f64, b: f64) -> Vec<(usize, f64)> {
    let tok = |s: &str| -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_whitespace() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    };
    let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| tok(d)).collect();
    let n = docs.len() as f64;
    let avg = doc_tokens.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut qterms: Vec<String> = Vec::new();
    for t in tok(query) {
        if !qterms.contains(&t) {
            qterms.push(t);
        }
    }
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (i, toks) in doc_tokens.iter().enumerate() {
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for t in toks {
            *tf.entry(t.as_str()).or_default() += 1.0;
        }
        let len = toks.len() as f64;
        let mut s = 0.0;
        for q in &qterms {
            let f = tf.get(q.as_str()).copied().unwrap_or(0.0);
            if f == 0.0 {
                continue;
            }
            let df = doc_tokens
                .iter()
                .filter(|d| d.iter().collect::<HashSet<_>>().contains(q))
                .count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * len / avg));
        }
        if s > 0.0 {
            scored.push((i, s));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

pub fn corpus_of(texts: &[String]) -> Corpus {
    Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: format!("d{i}"),
                title: String::new(),
                text: t.clone(),
            })
            .collect(),
    )
    .unwrap()
}

/// Small multi-hop corpus used across orchestration tests.
pub fn qa_corpus() -> Corpus {
    let lines = [
        r#"{"doc_id":"inception","title":"Inception","text":"Inception is a 2010 science fiction film written and directed by Christopher Nolan."}"#,
        r#"{"doc_id":"nolan","title":"Christopher Nolan","text":"Christopher Nolan is a British film director born in London in 1970."}"#,
        r#"{"doc_id":"paris","title":"Paris","text":"Paris is the capital and largest city of France."}"#,
        r#"{"doc_id":"france","title":"France","text":"France is a country in Western Europe whose capital is Paris."}"#,
        r#"{"doc_id":"london","title":"London","text":"London is the capital of England and the United Kingdom."}"#,
        r#"{"doc_id":"thames","title":"River Thames","text":"The River Thames flows through London."}"#,
        r#"{"doc_id":"seine","title":"Seine","text":"The Seine is a river that flows through Paris."}"#,
        r#"{"doc_id":"everest","title":"Mount Everest","text":"Mount Everest is the highest mountain above sea level, located in the Himalayas."}"#,
        r#"{"doc_id":"hillary","title":"Edmund Hillary","text":"Edmund Hillary and Tenzing Norgay made the first ascent of Mount Everest in 1953."}"#,
        r#"{"doc_id":"nz","title":"New Zealand","text":"Edmund Hillary was born in Auckland, New Zealand."}"#,
        r#"{"doc_id":"beatles","title":"The Beatles","text":"The Beatles were an English rock band formed in Liverpool in 1960."}"#,
        r#"{"doc_id":"liverpool","title":"Liverpool","text":"Liverpool is a city in North West England on the River Mersey."}"#,
    ];
    Corpus::ingest(lines.join("\n").as_bytes()).unwrap()
}

pub const QUESTIONS: [&str; 10] = [
    "Who directed Inception?",
    "In which year was the director of Inception born?",
    "What is the capital of France?",
    "Which river flows through the capital of France?",
    "Which river flows through London?",
    "Who made the first ascent of Mount Everest?",
    "Where was the first person to climb Mount Everest born?",
    "In which city were the Beatles formed?",
    "On which river is the city where the Beatles formed?",
    "In which country is the capital city Paris?",
];

/// Scripted backend with constant per-call usage: votes cost `decide`, each
/// THINK call costs `think_call`, the answer costs `answer`. `decision` is
/// what every agent votes.
pub fn constant_backend(decision: &str, decide: (u64, u64), think_call: (u64, u64), answer: (u64, u64)) -> ScriptedBackend {
    ScriptedBackend::new(ScriptedRuleSet::new(
        vec![
            ScriptedRule::new(CallTag::Decide, "", decision).with_usage(decide.0, decide.1),
            ScriptedRule::new(CallTag::SubQuery, "", "What is the key entity?").with_usage(think_call.0, think_call.1),
            ScriptedRule::new(CallTag::SubAnswer, "", "It is the one named in the question.")
                .with_usage(think_call.0, think_call.1),
            ScriptedRule::new(CallTag::FinalAnswer, "", "Paris").with_usage(answer.0, answer.1),
        ],
        "",
    ))
}

/// Test backend whose replies are a pure function of (tag, prompt, seed) via
/// FNV-1a. Sub-queries draw from the corpus vocabulary so both novel and
/// repeated thoughts occur.
pub struct HashBackend {
    pub salt: u64,
}

const WORDS: [&str; 16] = [
    "Inception", "Nolan", "Paris", "France", "London", "Thames", "Seine", "Everest", "Hillary", "Auckland",
    "Beatles", "Liverpool", "Mersey", "river", "capital", "born",
];

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for &b in *p {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ace_core::LlmBackend for HashBackend {
    fn complete(
        &self,
        request: &ace_core::CompletionRequest,
    ) -> Result<ace_core::Completion, ace_core::backend::BackendError> {
        let h = fnv(&[
            &self.salt.to_le_bytes(),
            request.tag.name().as_bytes(),
            request.prompt.as_bytes(),
            &request.seed.to_le_bytes(),
        ]);
        let text = match request.tag {
            CallTag::Decide => if h & 1 == 0 { "THINK" } else { "RETRIEVE" }.to_string(),
            CallTag::SubQuery => format!(
                "Where is {} relative to {}?",
                WORDS[(h % 16) as usize],
                WORDS[((h >> 8) % 4) as usize]
            ),
            CallTag::SubAnswer => WORDS[((h >> 16) % 16) as usize].to_string(),
            CallTag::FinalAnswer => WORDS[((h >> 24) % 16) as usize].to_string(),
        };
        let usage = ace_core::TokenUsage::new(
            ace_core::count_tokens(&request.prompt),
            ace_core::count_tokens(&text),
        );
        Ok(ace_core::Completion { text, usage })
    }
}
