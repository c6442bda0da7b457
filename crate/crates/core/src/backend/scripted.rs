//! Deterministic rule-table backend.
//!
//! A rule set is a list of rules checked in order; the first rule whose tag,
//! prompt matcher and (optional) seed all match supplies the response. Rule
//! files are line-delimited JSON:
//!
//! ```text
//! {"tag": "decide", "match": "capital of", "seed": 2, "response": "RETRIEVE"}
//! {"tag": "sub_query", "match": "re:born in \\d+", "response": "Who?", "prompt_tokens": 10, "completion_tokens": 1}
//! {"default_response": "I don't know"}
//! ```
//!
//! `tag` may be `"*"` to match any call. A `match` prefixed with `re:` is a
//! regular expression, otherwise a plain substring (empty matches anything).
//! Missing token counts fall back to [`count_tokens`]. Blank lines and lines
//! starting with `#` are ignored.

use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{count_tokens, BackendError, CallTag, Completion, CompletionRequest, LlmBackend, TokenUsage};

#[derive(Debug, Clone)]
pub enum TextMatch {
    Substring(String),
    Pattern(Regex),
}

impl TextMatch {
    pub fn parse(spec: &str) -> Result<Self, regex::Error> {
        match spec.strip_prefix("re:") {
            Some(pattern) => Ok(TextMatch::Pattern(Regex::new(pattern)?)),
            None => Ok(TextMatch::Substring(spec.to_string())),
        }
    }

    pub fn is_match(&self, text: &str) -> bool {
        match self {
            TextMatch::Substring(s) => text.contains(s.as_str()),
            TextMatch::Pattern(re) => re.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedRule {
    /// `None` matches every tag.
    pub tag: Option<CallTag>,
    pub matcher: TextMatch,
    pub seed: Option<u64>,
    pub response: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ScriptedRule {
    pub fn new(tag: CallTag, substring: &str, response: &str) -> Self {
        Self {
            tag: Some(tag),
            matcher: TextMatch::Substring(substring.to_string()),
            seed: None,
            response: response.to_string(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn any_tag(substring: &str, response: &str) -> Self {
        Self {
            tag: None,
            ..Self::new(CallTag::Decide, substring, response)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.prompt_tokens = Some(prompt_tokens);
        self.completion_tokens = Some(completion_tokens);
        self
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        self.tag.is_none_or(|t| t == request.tag)
            && self.seed.is_none_or(|s| s == request.seed)
            && self.matcher.is_match(&request.prompt)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedRuleSet {
    pub rules: Vec<ScriptedRule>,
    pub default_response: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    tag: Option<String>,
    #[serde(rename = "match", default)]
    matcher: String,
    seed: Option<u64>,
    response: Option<String>,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
    default_response: Option<String>,
}

impl ScriptedRuleSet {
    pub fn new(rules: Vec<ScriptedRule>, default_response: impl Into<String>) -> Self {
        Self {
            rules,
            default_response: default_response.into(),
        }
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, BackendError> {
        let mut set = ScriptedRuleSet::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| BackendError::RuleSet {
                line: line_no,
                message,
            };
            let rec: RuleRecord = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
            if let Some(default) = rec.default_response {
                if rec.response.is_some() || rec.tag.is_some() {
                    return Err(err("default_response record must stand alone".into()));
                }
                set.default_response = default;
                continue;
            }
            let tag = match rec.tag.as_deref() {
                None => return Err(err("missing field `tag`".into())),
                Some("*") | Some("any") => None,
                Some(t) => Some(t.parse::<CallTag>().map_err(err)?),
            };
            let response = rec.response.ok_or_else(|| err("missing field `response`".into()))?;
            let matcher = TextMatch::parse(&rec.matcher).map_err(|e| err(e.to_string()))?;
            set.rules.push(ScriptedRule {
                tag,
                matcher,
                seed: rec.seed,
                response,
                prompt_tokens: rec.prompt_tokens,
                completion_tokens: rec.completion_tokens,
            });
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn resolve(&self, request: &CompletionRequest) -> Completion {
        let (text, prompt_tokens, completion_tokens) =
            match self.rules.iter().find(|r| r.matches(request)) {
                Some(rule) => (&rule.response, rule.prompt_tokens, rule.completion_tokens),
                None => (&self.default_response, None, None),
            };
        let usage = TokenUsage::new(
            prompt_tokens.unwrap_or_else(|| count_tokens(&request.prompt)),
            completion_tokens.unwrap_or_else(|| count_tokens(text)),
        );
        Completion {
            text: text.clone(),
            usage,
        }
    }
}

/// Backend answering from a [`ScriptedRuleSet`]. Records every request it sees.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: ScriptedRuleSet,
    calls: AtomicUsize,
    log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new(rules: ScriptedRuleSet) -> Self {
        Self {
            rules,
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn rules(&self) -> &ScriptedRuleSet {
        &self.rules
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn requests_with_tag(&self, tag: CallTag) -> Vec<CompletionRequest> {
        self.requests().into_iter().filter(|r| r.tag == tag).collect()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("request log poisoned")
            .push(request.clone());
        Ok(self.rules.resolve(request))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
