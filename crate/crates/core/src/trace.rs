//! Line-delimited JSON episode traces (`schema: "ace-trace/1"`).
//!
//! An episode is written as one `round` record per round followed by one
//! `summary` record. A file may hold many episodes back to back.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TokenUsage;
use crate::orchestrator::{Aborted, EpisodeResult, RoundTrace};
use crate::reasoner::FinalAnswer;

pub const TRACE_SCHEMA: &str = "ace-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported schema `{schema}`")]
    Schema { line: usize, schema: String },
    #[error("line {line}: summary disagrees with its round records: {message}")]
    Inconsistent { line: usize, message: String },
    #[error("trace ends with {0} round record(s) and no summary")]
    Truncated(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Round {
        #[serde(default)]
        episode_id: String,
        #[serde(flatten)]
        round: RoundTrace,
    },
    Summary(Summary),
}

#[derive(Serialize, Deserialize)]
struct Summary {
    #[serde(default)]
    episode_id: String,
    question: String,
    answer: FinalAnswer,
    n_rounds: usize,
    think_count: usize,
    retrieve_count: usize,
    total_usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aborted: Option<Aborted>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema: String,
    #[serde(flatten)]
    record: Record,
}

/// Writes one episode: a record per round, then the summary.
pub fn write_trace<W: Write>(result: &EpisodeResult, sink: &mut W) -> Result<(), TraceError> {
    for round in &result.rounds {
        let env = Envelope {
            schema: TRACE_SCHEMA.to_string(),
            record: Record::Round {
                episode_id: result.episode_id.clone(),
                round: round.clone(),
            },
        };
        serde_json::to_writer(&mut *sink, &env).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    let env = Envelope {
        schema: TRACE_SCHEMA.to_string(),
        record: Record::Summary(Summary {
            episode_id: result.episode_id.clone(),
            question: result.question.clone(),
            answer: result.answer.clone(),
            n_rounds: result.rounds.len(),
            think_count: result.think_count,
            retrieve_count: result.retrieve_count,
            total_usage: result.total_usage,
            aborted: result.aborted.clone(),
        }),
    };
    serde_json::to_writer(&mut *sink, &env).map_err(std::io::Error::from)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Reads every episode in a trace stream. Counters and usage are recomputed
/// from the round records and checked against each summary.
pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<EpisodeResult>, TraceError> {
    let mut episodes = Vec::new();
    let mut pending: Vec<RoundTrace> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let env: Envelope = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if env.schema != TRACE_SCHEMA {
            return Err(TraceError::Schema {
                line: line_no,
                schema: env.schema,
            });
        }
        match env.record {
            Record::Round { round, .. } => pending.push(round),
            Record::Summary(s) => {
                let mut ep = EpisodeResult {
                    episode_id: s.episode_id,
                    question: s.question,
                    answer: s.answer,
                    rounds: std::mem::take(&mut pending),
                    total_usage: TokenUsage::ZERO,
                    think_count: 0,
                    retrieve_count: 0,
                    aborted: s.aborted,
                };
                ep.recount();
                let inconsistent = |message: String| TraceError::Inconsistent {
                    line: line_no,
                    message,
                };
                if ep.rounds.len() != s.n_rounds {
                    return Err(inconsistent(format!(
                        "{} round records, summary says {}",
                        ep.rounds.len(),
                        s.n_rounds
                    )));
                }
                if (ep.think_count, ep.retrieve_count) != (s.think_count, s.retrieve_count) {
                    return Err(inconsistent(format!(
                        "counts {}/{} vs summary {}/{}",
                        ep.think_count, ep.retrieve_count, s.think_count, s.retrieve_count
                    )));
                }
                if ep.total_usage != s.total_usage {
                    return Err(inconsistent(format!(
                        "token total {} vs summary {}",
                        ep.total_usage.total(),
                        s.total_usage.total()
                    )));
                }
                episodes.push(ep);
            }
        }
    }
    if !pending.is_empty() {
        return Err(TraceError::Truncated(pending.len()));
    }
    Ok(episodes)
}
