use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest};

const MOCK_ORACLE_TOML: &str = include_str!("../../config/mock_oracle.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub trigger: String,
    pub response: String,
    #[serde(default)]
    pub priority: i64,
}

impl MockRule {
    pub fn new(trigger: impl Into<String>, response: impl Into<String>, priority: i64) -> Self {
        Self {
            trigger: trigger.into(),
            response: response.into(),
            priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    pub default_response: String,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self::ph_oracle()
    }
}

impl MockConfig {
    /// The shipped PH oracle rule table.
    pub fn ph_oracle() -> Self {
        toml::from_str(MOCK_ORACLE_TOML).expect("shipped mock oracle parses")
    }

    pub fn shipped_toml() -> &'static str {
        MOCK_ORACLE_TOML
    }
}

/// Rule-table backend: a pure function of the prompt text.
#[derive(Debug, Clone)]
pub struct MockBackend {
    // sorted by (priority desc, declaration order)
    rules: Vec<(Regex, String)>,
    default_response: String,
}

impl MockBackend {
    pub fn new(config: &MockConfig) -> Result<Self, BackendError> {
        let mut indexed = Vec::with_capacity(config.rules.len());
        for (i, rule) in config.rules.iter().enumerate() {
            let re = Regex::new(&rule.trigger)
                .map_err(|e| BackendError::Config(format!("mock rule #{i} trigger: {e}")))?;
            indexed.push((rule.priority, i, re, rule.response.clone()));
        }
        indexed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(Self {
            rules: indexed
                .into_iter()
                .map(|(_, _, re, resp)| (re, resp))
                .collect(),
            default_response: config.default_response.clone(),
        })
    }

    pub fn respond(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(prompt))
            .map(|(_, r)| r.as_str())
            .unwrap_or(&self.default_response)
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(self.respond(&request.prompt).to_string())
    }

    fn name(&self) -> &str {
        "mock"
    }
}
