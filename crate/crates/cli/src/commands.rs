//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ace_core::backend::{BackendError, HttpBackend, HttpConfig, ScriptedBackend, ScriptedRuleSet};
use ace_core::eval::{format_table, load_dataset_file, write_reports, EvalError};
use ace_core::retriever::{RetrievalError, RetrievalRequest, Retriever};
use ace_core::{
    read_traces, run_bench, run_episode, write_trace, Action, BenchConfig, Bm25Retriever, CommitteeConfig, Corpus,
    EpisodeDeps, EpisodeResult, GenerationParams, LlmBackend, Passage,
};

use crate::config::{BackendKind, RunConfig};
use crate::CliError;

/// Problems with input files are the caller's to fix (exit 2).
fn retrieval_error(e: RetrievalError) -> CliError {
    match e {
        RetrievalError::Open { .. }
        | RetrievalError::Malformed { .. }
        | RetrievalError::DuplicateId { .. }
        | RetrievalError::EmptyCorpus
        | RetrievalError::CorruptIndex(_)
        | RetrievalError::Format(_)
        | RetrievalError::Json(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Open { .. } | EvalError::Malformed { .. } | EvalError::Empty => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn index(corpus_path: &Path, out: &Path) -> Result<(), CliError> {
    let corpus = Corpus::load(corpus_path).map_err(retrieval_error)?;
    let docs = corpus.doc_count();
    let retriever = Bm25Retriever::build(corpus, ace_core::retriever::DEFAULT_K1, ace_core::retriever::DEFAULT_B)
        .map_err(retrieval_error)?;
    retriever
        .save(out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    println!("indexed {docs} documents -> {}", out.display());
    Ok(())
}

/// Stand-in when no corpus is configured; only reachable for N = 0 runs,
/// which never retrieve.
struct NoCorpus;

impl Retriever for NoCorpus {
    fn retrieve(&self, _: &RetrievalRequest) -> Result<Vec<Passage>, RetrievalError> {
        Err(RetrievalError::EmptyCorpus)
    }
}

fn load_retriever(cfg: &RunConfig, needs_corpus: bool) -> Result<Box<dyn Retriever>, CliError> {
    if let Some(path) = &cfg.index {
        return Ok(Box::new(Bm25Retriever::load(path).map_err(|e| match e {
            RetrievalError::Json(j) => CliError::Usage(format!("{}: not a valid index: {j}", path.display())),
            other => retrieval_error(other),
        })?));
    }
    if let Some(path) = &cfg.corpus {
        let corpus = Corpus::load(path).map_err(retrieval_error)?;
        let r = Bm25Retriever::build(corpus, ace_core::retriever::DEFAULT_K1, ace_core::retriever::DEFAULT_B)
            .map_err(retrieval_error)?;
        return Ok(Box::new(r));
    }
    if needs_corpus {
        return Err(CliError::Usage("no corpus: pass --corpus <PATH> or --index <PATH>".into()));
    }
    Ok(Box::new(NoCorpus))
}

fn load_backend(cfg: &RunConfig) -> Result<Box<dyn LlmBackend>, CliError> {
    match cfg.backend {
        BackendKind::Scripted => {
            let path = cfg.rules.as_ref().expect("validated: scripted backend has rules");
            let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
            let rules = ScriptedRuleSet::from_reader(BufReader::new(file))
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(Box::new(ScriptedBackend::new(rules)))
        }
        BackendKind::Http => {
            let mut http = HttpConfig::new(
                cfg.api_base.clone().expect("validated: http backend has a base URL"),
                cfg.model.clone().expect("validated: http backend has a model"),
            );
            http.api_key = cfg.api_key.clone();
            http.max_in_flight = Some(cfg.concurrency);
            let backend = HttpBackend::new(http).map_err(|e: BackendError| CliError::Usage(e.to_string()))?;
            Ok(Box::new(backend))
        }
    }
}

fn committee(cfg: &RunConfig) -> CommitteeConfig {
    let mut c = CommitteeConfig::new(cfg.k, cfg.temperature, cfg.seed);
    c.tie_break = cfg.tie_break;
    c
}

fn generation(cfg: &RunConfig) -> GenerationParams {
    GenerationParams {
        temperature: 0.0,
        seed: cfg.seed,
        max_tokens: cfg.max_tokens,
    }
}

fn write_traces(path: &Path, episodes: &[EpisodeResult]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for ep in episodes {
        write_trace(ep, &mut w).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn rounds_line(actions: &[Action]) -> String {
    if actions.is_empty() {
        "rounds: (none)".to_string()
    } else {
        format!(
            "rounds: {}",
            actions.iter().map(|a| a.label()).collect::<Vec<_>>().join(", ")
        )
    }
}

pub fn ask(question: &str, cfg: &RunConfig) -> Result<(), CliError> {
    if question.trim().is_empty() {
        return Err(CliError::Usage("question is empty".into()));
    }
    let retriever = load_retriever(cfg, cfg.n > 0)?;
    let backend = load_backend(cfg)?;
    let deps = EpisodeDeps {
        backend: backend.as_ref(),
        retriever: retriever.as_ref(),
        prompts: &cfg.prompts,
        top_k: cfg.top_k,
        generation: generation(cfg),
    };
    let outcome = run_episode(question, cfg.n, &committee(cfg), &cfg.policy, &deps);
    let (episode, failure) = match outcome {
        Ok(ep) => (ep, None),
        Err(e) => {
            let msg = e.to_string();
            (*e.partial, Some(msg))
        }
    };
    if let Some(path) = &cfg.trace_out {
        write_traces(path, std::slice::from_ref(&episode))?;
    }
    if let Some(msg) = failure {
        return Err(CliError::Runtime(msg));
    }
    println!("{}", episode.answer.text);
    println!("{}", rounds_line(&episode.actions()));
    println!("tokens: {}", episode.total_usage.total());
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("bench needs --dataset <PATH>".into()))?;
    let items = load_dataset_file(dataset).map_err(eval_error)?;
    let sweep = cfg.n_sweep.clone().unwrap_or_else(|| vec![cfg.n]);
    let retriever = load_retriever(cfg, sweep.iter().any(|&n| n > 0))?;
    let backend = load_backend(cfg)?;
    let deps = EpisodeDeps {
        backend: backend.as_ref(),
        retriever: retriever.as_ref(),
        prompts: &cfg.prompts,
        top_k: cfg.top_k,
        generation: generation(cfg),
    };

    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for &n in &sweep {
        let run = run_bench(
            &items,
            &BenchConfig {
                n_rounds: n,
                committee: committee(cfg),
                policy: cfg.policy.clone(),
                metric: cfg.metric,
                concurrency: cfg.concurrency,
                digest_salt: cfg.digest_salt(),
            },
            &deps,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        if run.report.n_aborted > 0 {
            log::warn!("N={n}: {} of {} episodes aborted", run.report.n_aborted, run.report.n_questions);
        }
        reports.push(run.report);
        traces.extend(run.episodes.into_iter().map(|mut ep| {
            ep.episode_id = format!("{}@N={n}", ep.episode_id);
            ep
        }));
    }

    print!("{}", format_table(&reports));
    if let Some(path) = &cfg.report_out {
        let mut w = create(path)?;
        write_reports(&reports, &mut w).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        w.flush()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &cfg.trace_out {
        write_traces(path, &traces)?;
    }
    Ok(())
}

pub fn replay(path: &Path, verbose: bool) -> Result<(), CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let episodes = read_traces(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if episodes.is_empty() {
        return Err(CliError::Usage(format!("{}: no episodes", path.display())));
    }
    for ep in &episodes {
        let id = if ep.episode_id.is_empty() { "-" } else { &ep.episode_id };
        println!("episode {id}: {}", ep.question);
        if verbose {
            for r in &ep.rounds {
                let votes = r
                    .votes
                    .iter()
                    .map(|v| &v.action.label()[..1])
                    .collect::<Vec<_>>()
                    .join("");
                let votes = if votes.is_empty() { "-".to_string() } else { votes };
                println!(
                    "  round {}: {} votes={} added={} tokens={}",
                    r.round,
                    r.action.label(),
                    votes,
                    r.items_added.len(),
                    r.usage.total()
                );
                for item in &r.items_added {
                    println!("    + {item}");
                }
            }
        }
        println!("  {}", rounds_line(&ep.actions()));
        println!("  answer: {}", ep.answer.text);
        println!("  tokens: {}", ep.total_usage.total());
        if let Some(a) = &ep.aborted {
            println!("  aborted in round {}: {}", a.round, a.message);
        }
    }
    let total_tokens: u64 = episodes.iter().map(|e| e.total_usage.total()).sum();
    let think: usize = episodes.iter().map(|e| e.think_count).sum();
    let rounds: usize = episodes.iter().map(|e| e.think_count + e.retrieve_count).sum();
    let think_pct = if rounds == 0 {
        0.0
    } else {
        100.0 * think as f64 / rounds as f64
    };
    println!(
        "{} episode(s), avg tokens {:.1}, think {:.1}%",
        episodes.len(),
        total_tokens as f64 / episodes.len() as f64,
        think_pct
    );
    Ok(())
}
