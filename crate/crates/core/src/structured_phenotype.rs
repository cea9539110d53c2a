//! Rules-based baseline over diagnosis and medication codes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_code, PatientRecord, StructuredEvent, Vocabulary};

const DEFAULT_RULES_TOML: &str = include_str!("../config/structured_rules.toml");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticCode {
    pub vocabulary: Vocabulary,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub diagnostic_codes: BTreeSet<DiagnosticCode>,
    /// RxNorm codes.
    pub medication_codes: BTreeSet<String>,
    #[serde(default = "one")]
    pub min_code_count: usize,
    #[serde(default)]
    pub prefix_match: bool,
}

fn one() -> usize {
    1
}

impl Default for RuleSet {
    fn default() -> Self {
        toml::from_str(DEFAULT_RULES_TOML).expect("shipped rule set parses")
    }
}

impl RuleSet {
    pub fn shipped_toml() -> &'static str {
        DEFAULT_RULES_TOML
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_code_count == 0 {
            return Err("min_code_count must be >= 1".into());
        }
        if self
            .diagnostic_codes
            .iter()
            .any(|c| c.code.trim().is_empty())
            || self.medication_codes.iter().any(|c| c.trim().is_empty())
        {
            return Err("rule codes must be non-empty".into());
        }
        Ok(())
    }

    pub fn is_diagnostic(&self, event: &StructuredEvent) -> bool {
        if event.vocabulary == Vocabulary::RxNorm {
            return false;
        }
        let code = event.normalized_code();
        self.diagnostic_codes.iter().any(|rule| {
            if rule.vocabulary != event.vocabulary {
                return false;
            }
            let rule_code = normalize_code(&rule.code);
            code == rule_code || (self.prefix_match && code.starts_with(&rule_code))
        })
    }

    pub fn is_medication(&self, event: &StructuredEvent) -> bool {
        event.vocabulary == Vocabulary::RxNorm
            && self
                .medication_codes
                .iter()
                .any(|c| normalize_code(c) == event.normalized_code())
    }
}

/// Positive when enough diagnostic codes fire or any PH medication appears.
pub fn classify_structured(record: &PatientRecord, rules: &RuleSet) -> bool {
    let diagnostic = record
        .events
        .iter()
        .filter(|e| rules.is_diagnostic(e))
        .count();
    diagnostic >= rules.min_code_count || record.events.iter().any(|e| rules.is_medication(e))
}
