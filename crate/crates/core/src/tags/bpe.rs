//! Rule-based BodyPartExamined imputation from free-text description tags.

use regex::{Regex, RegexBuilder};
use serde::Deserialize;

use super::TagError;

/// Tags scanned when a rule does not list its own.
pub const DEFAULT_SOURCE_TAGS: [&str; 3] = ["ProtocolName", "StudyDescription", "RequestedProcedureDescription"];

pub const STARTER_BPE_RULES: &str = include_str!("../../rules/bpe_rules.json");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    pattern: String,
    body_part: String,
    #[serde(default)]
    source_tags: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[allow(dead_code)]
    version: u32,
    rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct BpeRule {
    pub index: usize,
    pub pattern: Regex,
    pub body_part: String,
    pub source_tags: Vec<String>,
}

/// Ordered rule list; the first rule matching any of its source tags wins.
#[derive(Debug, Clone)]
pub struct BpeRules {
    pub rules: Vec<BpeRule>,
}

impl BpeRules {
    pub fn from_json(json: &str) -> Result<Self, TagError> {
        let file: RulesFile = serde_json::from_str(json).map_err(|e| TagError::RulesFileInvalid(e.to_string()))?;
        let rules = file
            .rules
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                let pattern = RegexBuilder::new(&r.pattern)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| TagError::RulesFileInvalid(format!("rule {index}: {e}")))?;
                if r.body_part.trim().is_empty() {
                    return Err(TagError::RulesFileInvalid(format!("rule {index}: empty body_part")));
                }
                Ok(BpeRule {
                    index,
                    pattern,
                    body_part: r.body_part.trim().to_uppercase(),
                    source_tags: r
                        .source_tags
                        .unwrap_or_else(|| DEFAULT_SOURCE_TAGS.iter().map(|s| (*s).to_owned()).collect()),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    pub fn starter() -> Self {
        Self::from_json(STARTER_BPE_RULES).expect("bundled rules are valid")
    }
}

/// Returns the recorded body part (trimmed, uppercased) when present,
/// otherwise the body part of the first rule matching one of its source
/// tags, otherwise `None`. `get` looks up a tag value by name.
pub fn impute_bpe<F>(get: F, rules: &BpeRules) -> Option<String>
where
    F: Fn(&str) -> Option<String>,
{
    if let Some(bpe) = get("BodyPartExamined").map(|s| s.trim().to_uppercase()).filter(|s| !s.is_empty()) {
        return Some(bpe);
    }
    rules.rules.iter().find_map(|rule| {
        rule.source_tags
            .iter()
            .filter_map(|t| get(t))
            .any(|text| rule.pattern.is_match(&text.to_lowercase()))
            .then(|| rule.body_part.clone())
    })
}
