//! Prompt templates with `{Q}`, `{M_i}` and `{Q_sub}` placeholders.
//!
//! Defaults live in `assets/prompts/*.txt`; each can be overridden through
//! the config keys `prompts.decide`, `prompts.sub_query`, `prompts.sub_answer`
//! and `prompts.final_answer`.

use crate::memory::RenderConfig;

const DECIDE: &str = include_str!("../assets/prompts/decide.txt");
const SUB_QUERY: &str = include_str!("../assets/prompts/sub_query.txt");
const SUB_ANSWER: &str = include_str!("../assets/prompts/sub_answer.txt");
const FINAL_ANSWER: &str = include_str!("../assets/prompts/final_answer.txt");

pub const PH_QUESTION: &str = "Q";
pub const PH_MEMORY: &str = "M_i";
pub const PH_SUB_QUERY: &str = "Q_sub";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub decide: String,
    pub sub_query: String,
    pub sub_answer: String,
    pub final_answer: String,
    pub render: RenderConfig,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            decide: DECIDE.trim_end().to_string(),
            sub_query: SUB_QUERY.trim_end().to_string(),
            sub_answer: SUB_ANSWER.trim_end().to_string(),
            final_answer: FINAL_ANSWER.trim_end().to_string(),
            render: RenderConfig::default(),
        }
    }
}

impl PromptSet {
    /// Applies an override by config key (`prompts.decide`, ...). Returns
    /// false for an unknown key.
    pub fn set(&mut self, key: &str, template: &str) -> bool {
        let slot = match key.strip_prefix("prompts.").unwrap_or(key) {
            "decide" => &mut self.decide,
            "sub_query" => &mut self.sub_query,
            "sub_answer" => &mut self.sub_answer,
            "final_answer" => &mut self.final_answer,
            _ => return false,
        };
        *slot = template.to_string();
        true
    }
}

/// Single-pass placeholder substitution. Substituted values are never
/// rescanned, so a question containing `{M_i}` stays literal. Unknown
/// placeholders are left untouched.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
