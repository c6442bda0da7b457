//! Datasets, answer scoring, report aggregation and the bench runner.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::committee::CommitteeConfig;
use crate::orchestrator::{run_episode, EpisodeDeps, EpisodePolicy, EpisodeResult, PolicyMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no results to aggregate")]
    Empty,
    #[error("{results} results but {scored} scores")]
    LengthMismatch { results: usize, scored: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    /// Primary answer first, then aliases. Never empty.
    pub gold_answers: Vec<String>,
}

#[derive(Deserialize)]
struct QaRecord {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    aliases: Vec<String>,
}

/// Reads `{id, question, answer, aliases?}` records, one per line.
pub fn load_dataset<R: BufRead>(reader: R) -> Result<Vec<QaItem>, EvalError> {
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| EvalError::Malformed {
            line: line_no,
            message,
        };
        let rec: QaRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if rec.question.trim().is_empty() {
            return Err(malformed("question is empty".into()));
        }
        let mut gold_answers = vec![rec.answer];
        gold_answers.extend(rec.aliases);
        items.push(QaItem {
            id: rec.id,
            question: rec.question,
            gold_answers,
        });
    }
    Ok(items)
}

pub fn load_dataset_file(path: impl AsRef<Path>) -> Result<Vec<QaItem>, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| EvalError::Open {
        path: path.display().to_string(),
        source: e,
    })?;
    load_dataset(std::io::BufReader::new(file))
}

/// How a prediction is matched against gold answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Normalized gold contained in normalized prediction (or equal).
    #[default]
    Contain,
    /// Normalized equality.
    Exact,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Contain => "contain",
            Metric::Exact => "exact",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "contain" | "contains" => Ok(Metric::Contain),
            "exact" | "em" => Ok(Metric::Exact),
            _ => Err(format!("unknown metric `{s}` (expected exact or contain)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Casefold, strip punctuation, collapse whitespace, drop a leading article.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    if matches!(words.first(), Some(&("a" | "an" | "the"))) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn score_answer(prediction: &str, gold_answers: &[String], metric: Metric) -> bool {
    let pred = normalize_answer(prediction);
    gold_answers.iter().any(|gold| {
        let gold = normalize_answer(gold);
        match metric {
            Metric::Exact => !gold.is_empty() && pred == gold,
            Metric::Contain => !gold.is_empty() && pred.contains(gold.as_str()),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method_label: String,
    pub n_rounds: usize,
    pub metric: Metric,
    pub accuracy_percent: f64,
    pub avg_tokens: f64,
    pub think_percent: f64,
    pub n_questions: usize,
    pub n_aborted: usize,
    pub config_digest: String,
}

/// Accuracy, mean total tokens and THINK share over a run. Aborted episodes
/// count, with whatever tokens they spent.
pub fn aggregate(results: &[EpisodeResult], scored: &[bool], label: &str) -> Result<Report, EvalError> {
    if results.len() != scored.len() {
        return Err(EvalError::LengthMismatch {
            results: results.len(),
            scored: scored.len(),
        });
    }
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = results.len() as f64;
    let correct = scored.iter().filter(|&&s| s).count();
    let tokens: u64 = results.iter().map(|r| r.total_usage.total()).sum();
    let think: usize = results.iter().map(|r| r.think_count).sum();
    let rounds: usize = results.iter().map(|r| r.think_count + r.retrieve_count).sum();
    Ok(Report {
        method_label: label.to_string(),
        n_rounds: results.iter().map(|r| r.rounds.len()).max().unwrap_or(0),
        metric: Metric::default(),
        accuracy_percent: 100.0 * correct as f64 / n,
        avg_tokens: tokens as f64 / n,
        think_percent: if rounds == 0 {
            0.0
        } else {
            100.0 * think as f64 / rounds as f64
        },
        n_questions: results.len(),
        n_aborted: results.iter().filter(|r| r.is_aborted()).count(),
        config_digest: String::new(),
    })
}

/// First 16 hex chars of SHA-256 over `text`.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

pub fn method_label(n_rounds: usize, policy: &EpisodePolicy, k: usize) -> String {
    if n_rounds == 0 {
        return "Vanilla".into();
    }
    match &policy.mode {
        PolicyMode::Vote => format!("ACE (k={k})"),
        PolicyMode::AlwaysRetrieve => "AlwaysRetrieve".into(),
        PolicyMode::AlwaysThink => "AlwaysThink".into(),
        other => other.label(),
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_rounds: usize,
    pub committee: CommitteeConfig,
    pub policy: EpisodePolicy,
    pub metric: Metric,
    pub concurrency: usize,
    /// Extra text mixed into the report digest (e.g. the CLI config).
    pub digest_salt: String,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: Report,
    pub episodes: Vec<EpisodeResult>,
    pub scored: Vec<bool>,
}

/// Runs every item, up to `concurrency` at a time, then aggregates. Results
/// are kept in dataset order regardless of completion order.
pub fn run_bench(items: &[QaItem], config: &BenchConfig, deps: &EpisodeDeps<'_>) -> Result<BenchRun, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let slots: Vec<Mutex<Option<EpisodeResult>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, items.len());
    let run_one = |item: &QaItem| -> EpisodeResult {
        let mut ep = match run_episode(&item.question, config.n_rounds, &config.committee, &config.policy, deps) {
            Ok(ep) => ep,
            Err(e) => {
                log::warn!("{}: {e}", item.id);
                *e.partial
            }
        };
        ep.episode_id = item.id.clone();
        ep
    };
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let ep = run_one(item);
                *slots[i].lock().expect("slot poisoned") = Some(ep);
            });
        }
    });
    let episodes: Vec<EpisodeResult> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot poisoned").expect("every item ran"))
        .collect();
    let scored: Vec<bool> = items
        .iter()
        .zip(&episodes)
        .map(|(item, ep)| !ep.is_aborted() && score_answer(&ep.answer.text, &item.gold_answers, config.metric))
        .collect();

    let label = method_label(config.n_rounds, &config.policy, config.committee.k);
    let mut report = aggregate(&episodes, &scored, &label)?;
    report.n_rounds = config.n_rounds;
    report.metric = config.metric;
    report.config_digest = digest(&format!(
        "n={};k={};seeds={:?};temp={};policy={};force_first={};early_stop={};tie={:?};metric={};top_k={};{}",
        config.n_rounds,
        config.committee.k,
        config.committee.agent_seeds,
        config.committee.temperature,
        config.policy.mode.label(),
        config.policy.force_first_retrieve,
        config.policy.early_stop,
        config.committee.tie_break,
        config.metric,
        deps.top_k,
        config.digest_salt
    ));
    Ok(BenchRun {
        report,
        episodes,
        scored,
    })
}

/// Fixed-width table with the Acc. / Avg. Tokens / Think% columns.
pub fn format_table(reports: &[Report]) -> String {
    let mut out = format!(
        "{:<18} {:>3} {:>9} {:>12} {:>9} {:>5} {:>8}\n",
        "Method", "N", "Acc. (%)", "Avg. Tokens", "Think (%)", "Qs", "Metric"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>3} {:>9.1} {:>12.1} {:>9.1} {:>5} {:>8}\n",
            r.method_label, r.n_rounds, r.accuracy_percent, r.avg_tokens, r.think_percent, r.n_questions, r.metric
        ));
    }
    out
}

/// One JSON object per report.
pub fn write_reports<W: Write>(reports: &[Report], sink: &mut W) -> Result<(), EvalError> {
    for r in reports {
        serde_json::to_writer(&mut *sink, r).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}
