//! `ace`: build indexes, answer questions, run benchmark sweeps and replay
//! traces.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunArgs;

/// Exit status 2: bad flags, config, or input files. Exit status 1: the run
/// itself failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

const AFTER_HELP: &str = "\
Settings are resolved in this order, first match wins:
  1. command-line flags
  2. the --config file (TOML, flat keys: n, k, top_k, policy, force_first_retrieve,
     early_stop, tie_break, backend, rules, corpus, index, dataset, trace_out,
     report_out, temperature, seed, concurrency, metric, n_sweep, max_tokens,
     api_base, api_key, model, prompts.decide, prompts.sub_query,
     prompts.sub_answer, prompts.final_answer)
  3. environment: ACE_API_BASE, ACE_API_KEY, ACE_MODEL
  4. built-in defaults

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.";

#[derive(Debug, Parser)]
#[command(name = "ace", version, about = "Retrieve-or-think question answering with a voting committee", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index from a corpus and save it.
    Index {
        /// Corpus file: one {"doc_id", "title"?, "text"} object per line
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        /// Where to write the index
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Answer one question and print the per-round actions.
    #[command(after_help = AFTER_HELP)]
    Ask {
        question: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a dataset for one or more N and print Acc. / Avg. Tokens / Think%.
    #[command(after_help = AFTER_HELP)]
    Bench {
        /// Dataset file: one {"id", "question", "answer", "aliases"?} object per line
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Round budgets to sweep, e.g. `1,2` or `1..8` [default: --n]
        #[arg(long, value_name = "LIST")]
        n_sweep: Option<String>,
        /// Write report records (JSONL) here
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Answer matching: contain | exact [default: contain]
        #[arg(long)]
        metric: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize a trace file written with --trace-out.
    Replay {
        trace: PathBuf,
        /// Print every round, including votes
        #[arg(long)]
        verbose: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index { corpus, out } => commands::index(&corpus, &out),
        Command::Ask { question, run } => {
            let cfg = config::RunConfig::resolve(&run)?;
            commands::ask(&question, &cfg)
        }
        Command::Bench {
            dataset,
            n_sweep,
            out,
            metric,
            run,
        } => {
            let mut cfg = config::RunConfig::resolve(&run)?;
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if out.is_some() {
                cfg.report_out = out;
            }
            if let Some(m) = metric {
                cfg.metric = m.parse().map_err(CliError::Usage)?;
            }
            if let Some(s) = n_sweep {
                cfg.n_sweep = Some(config::parse_n_sweep(&s).map_err(CliError::Usage)?);
            } else if run.n.is_some() {
                // An explicit --n beats a sweep from the config file.
                cfg.n_sweep = None;
            }
            commands::bench(&cfg)
        }
        Command::Replay { trace, verbose } => commands::replay(&trace, verbose),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
