//! Run configuration: command-line flags layered over a config file, the
//! backend environment variables and built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ace_core::backend::{ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
use ace_core::{EpisodePolicy, Metric, PolicyMode, PromptSet, TieBreak};
use clap::{Args, ValueEnum};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| format!("unknown backend `{s}` (expected scripted or http)"))
    }
}

fn parse_tie_break(s: &str) -> Result<TieBreak, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "retrieve" => Ok(TieBreak::Retrieve),
        "think" => Ok(TieBreak::Think),
        _ => Err(format!("unknown tie-break `{s}` (expected retrieve or think)")),
    }
}

/// Parses `1,2,5`, `1..8` (inclusive) or a mix such as `0,2..4`.
pub fn parse_n_sweep(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad N `{t}` in sweep `{s}`"));
        if let Some((lo, hi)) = part.split_once("..") {
            let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
            if lo > hi {
                return Err(format!("empty range `{part}` in sweep"));
            }
            out.extend(lo..=hi);
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err("empty N sweep".into());
    }
    Ok(out)
}

/// Flags shared by `ask` and `bench`. Every field is optional so that unset
/// flags fall through to the config file, then env, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Config file (TOML; flat keys such as `n = 3`, `prompts.decide = "..."`)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Number of action rounds N; 0 answers directly without retrieval [default: 3]
    #[arg(long)]
    pub n: Option<usize>,
    /// Committee size k [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Passages per RETRIEVE round [default: 5]
    #[arg(long)]
    pub top_k: Option<usize>,
    /// vote | always-retrieve | always-think | schedule:R,T,... [default: vote]
    #[arg(long)]
    pub policy: Option<String>,
    /// LLM backend [default: scripted]
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Scripted-backend rule file (required for the scripted backend)
    #[arg(long, value_name = "PATH")]
    pub rules: Option<PathBuf>,
    /// Corpus file (JSONL); the index is built in memory
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index written by `ace index`; takes precedence over --corpus
    #[arg(long, value_name = "PATH")]
    pub index: Option<PathBuf>,
    /// Write episode traces (JSONL) here
    #[arg(long, value_name = "PATH")]
    pub trace_out: Option<PathBuf>,
    /// Committee sampling temperature [default: 0.7]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Seed for every call; agent i uses seed + i [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episodes run in parallel by `bench`, and the HTTP in-flight limit [default: 4]
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Let the committee vote in round 0 too
    #[arg(long)]
    pub no_force_first_retrieve: bool,
    /// Stop early after a round that adds nothing to memory
    #[arg(long)]
    pub early_stop: bool,
    /// Winner of a tied vote: retrieve | think [default: retrieve]
    #[arg(long)]
    pub tie_break: Option<String>,
    /// Chat-completion base URL (overrides ACE_API_BASE)
    #[arg(long, value_name = "URL")]
    pub api_base: Option<String>,
    /// Model name (overrides ACE_MODEL)
    #[arg(long)]
    pub model: Option<String>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub top_k: usize,
    pub policy: EpisodePolicy,
    pub backend: BackendKind,
    pub rules: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub temperature: f64,
    pub seed: u64,
    pub concurrency: usize,
    pub tie_break: TieBreak,
    pub metric: Metric,
    pub n_sweep: Option<Vec<usize>>,
    pub max_tokens: u32,
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub prompts: PromptSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 3,
            k: 5,
            top_k: 5,
            policy: EpisodePolicy::default(),
            backend: BackendKind::Scripted,
            rules: None,
            corpus: None,
            index: None,
            dataset: None,
            trace_out: None,
            report_out: None,
            temperature: 0.7,
            seed: 0,
            concurrency: 4,
            tie_break: TieBreak::Retrieve,
            metric: Metric::Contain,
            n_sweep: None,
            max_tokens: 256,
            api_base: None,
            api_key: None,
            model: None,
            prompts: PromptSet::default(),
        }
    }
}

/// Config-file keys, documented in `--help` and the README.
pub const CONFIG_KEYS: &[&str] = &[
    "n",
    "k",
    "top_k",
    "policy",
    "force_first_retrieve",
    "early_stop",
    "tie_break",
    "backend",
    "rules",
    "corpus",
    "index",
    "dataset",
    "trace_out",
    "report_out",
    "temperature",
    "seed",
    "concurrency",
    "metric",
    "n_sweep",
    "max_tokens",
    "api_base",
    "api_key",
    "model",
    "prompts.decide",
    "prompts.sub_query",
    "prompts.sub_answer",
    "prompts.final_answer",
];

fn flatten(prefix: &str, table: toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (key, value) in table {
        let full = if prefix.is_empty() { key } else { format!("{prefix}.{key}") };
        match value {
            toml::Value::Table(t) => flatten(&full, t, out),
            v => out.push((full, v)),
        }
    }
}

/// Reads a config file into `(dotted key, value)` pairs.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, toml::Value)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    flatten("", table, &mut pairs);
    Ok(pairs)
}

fn as_str(key: &str, v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => Ok(items
            .iter()
            .map(|i| as_str(key, i))
            .collect::<Result<Vec<_>, _>>()?
            .join(",")),
        _ => Err(CliError::Usage(format!("config key `{key}`: unsupported value"))),
    }
}

fn parsed<T: FromStr>(key: &str, v: &toml::Value) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let s = as_str(key, v)?;
    s.trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))
}

impl RunConfig {
    /// Defaults, then env, then the config file (if any), then flags.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        cfg.apply_env();
        if let Some(path) = &args.config {
            for (key, value) in read_config_file(path)? {
                cfg.apply_key(&key, &value)?;
            }
        }
        cfg.apply_args(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        self.api_base = var(ENV_API_BASE);
        self.model = var(ENV_MODEL);
        self.api_key = var(ENV_API_KEY);
    }

    pub fn apply_key(&mut self, key: &str, v: &toml::Value) -> Result<(), CliError> {
        let path = |v: &toml::Value| as_str(key, v).map(PathBuf::from);
        match key {
            "n" => self.n = parsed(key, v)?,
            "k" => self.k = parsed(key, v)?,
            "top_k" => self.top_k = parsed(key, v)?,
            "policy" => {
                self.policy.mode = PolicyMode::parse(&as_str(key, v)?).map_err(CliError::Usage)?;
            }
            "force_first_retrieve" => self.policy.force_first_retrieve = parsed(key, v)?,
            "early_stop" => self.policy.early_stop = parsed(key, v)?,
            "tie_break" => self.tie_break = parse_tie_break(&as_str(key, v)?).map_err(CliError::Usage)?,
            "backend" => self.backend = parsed(key, v)?,
            "rules" => self.rules = Some(path(v)?),
            "corpus" => self.corpus = Some(path(v)?),
            "index" => self.index = Some(path(v)?),
            "dataset" => self.dataset = Some(path(v)?),
            "trace_out" => self.trace_out = Some(path(v)?),
            "report_out" => self.report_out = Some(path(v)?),
            "temperature" => self.temperature = parsed(key, v)?,
            "seed" => self.seed = parsed(key, v)?,
            "concurrency" => self.concurrency = parsed(key, v)?,
            "metric" => self.metric = parsed(key, v)?,
            "n_sweep" => self.n_sweep = Some(parse_n_sweep(&as_str(key, v)?).map_err(CliError::Usage)?),
            "max_tokens" => self.max_tokens = parsed(key, v)?,
            "api_base" => self.api_base = Some(as_str(key, v)?),
            "api_key" => self.api_key = Some(as_str(key, v)?),
            "model" => self.model = Some(as_str(key, v)?),
            k if k.starts_with("prompts.") => {
                let template = as_str(key, v)?;
                if !self.prompts.set(k, &template) {
                    return Err(CliError::Usage(format!("unknown config key `{k}`")));
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown config key `{other}` (known: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn apply_args(&mut self, a: &RunArgs) -> Result<(), CliError> {
        if let Some(v) = a.n {
            self.n = v;
        }
        if let Some(v) = a.k {
            self.k = v;
        }
        if let Some(v) = a.top_k {
            self.top_k = v;
        }
        if let Some(p) = &a.policy {
            self.policy.mode = PolicyMode::parse(p).map_err(CliError::Usage)?;
        }
        if a.no_force_first_retrieve {
            self.policy.force_first_retrieve = false;
        }
        if a.early_stop {
            self.policy.early_stop = true;
        }
        if let Some(t) = &a.tie_break {
            self.tie_break = parse_tie_break(t).map_err(CliError::Usage)?;
        }
        if let Some(b) = a.backend {
            self.backend = b;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &a.$field {
                    self.$field = Some(v.clone());
                }
            )*};
        }
        take!(rules, corpus, index, trace_out, api_base, model);
        if let Some(v) = a.temperature {
            self.temperature = v;
        }
        if let Some(v) = a.seed {
            self.seed = v;
        }
        if let Some(v) = a.concurrency {
            self.concurrency = v;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        match self.backend {
            BackendKind::Scripted if self.rules.is_none() => bad("the scripted backend needs --rules <PATH>"),
            BackendKind::Http if self.api_base.is_none() || self.model.is_none() => Err(CliError::Usage(format!(
                "the http backend needs an endpoint and model: set {ENV_API_BASE} and {ENV_MODEL}, or pass --api-base and --model"
            ))),
            _ => Ok(()),
        }
    }

    /// Stable text mixed into report digests so reports from different
    /// settings never share one.
    pub fn digest_salt(&self) -> String {
        format!(
            "backend={:?};model={};max_tokens={};prompts={:?}",
            self.backend,
            self.model.as_deref().unwrap_or(""),
            self.max_tokens,
            (
                &self.prompts.decide,
                &self.prompts.sub_query,
                &self.prompts.sub_answer,
                &self.prompts.final_answer
            )
        )
    }
}
