use std::collections::HashSet;

use regex::{RegexSet, RegexSetBuilder};
use serde::{Deserialize, Serialize};

use super::chunk::Snippet;
use super::RetrievalError;

const DEFAULT_PATTERNS_TOML: &str = include_str!("../../config/default_patterns.toml");

#[derive(Deserialize)]
struct ShippedPatterns {
    include: Vec<String>,
    exclude: Vec<String>,
    echo_ct_exclusion: Vec<String>,
}

fn shipped() -> ShippedPatterns {
    toml::from_str(DEFAULT_PATTERNS_TOML).expect("shipped pattern config parses")
}

/// Raw shipped pattern file, for inspection and `config` dumps.
pub fn shipped_pattern_config() -> &'static str {
    DEFAULT_PATTERNS_TOML
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSet {
    /// Matched case-insensitively; a snippet needs at least one hit.
    pub include: Vec<String>,
    /// Matched as written; any hit drops the snippet.
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl Default for PatternSet {
    fn default() -> Self {
        let s = shipped();
        Self {
            include: s.include,
            exclude: s.exclude,
        }
    }
}

/// Exclusion patterns for echocardiogram and CT report headers/boilerplate.
pub fn echo_ct_exclusion_patterns() -> Vec<String> {
    shipped().echo_ct_exclusion
}

impl PatternSet {
    pub fn with_exclusions(mut self, extra: impl IntoIterator<Item = String>) -> Self {
        for p in extra {
            if !self.exclude.contains(&p) {
                self.exclude.push(p);
            }
        }
        self
    }

    pub fn compile(&self) -> Result<Retriever, RetrievalError> {
        if self.include.is_empty() {
            return Err(RetrievalError::Config(
                "include pattern list is empty".into(),
            ));
        }
        let include = build(&self.include, true, "include")?;
        let exclude = build(&self.exclude, false, "exclude")?;
        Ok(Retriever {
            patterns: self.clone(),
            include,
            exclude,
        })
    }
}

fn build(
    patterns: &[String],
    case_insensitive: bool,
    list: &str,
) -> Result<RegexSet, RetrievalError> {
    // Compile individually first so the error names the offending pattern.
    for (index, p) in patterns.iter().enumerate() {
        regex::RegexBuilder::new(p)
            .case_insensitive(case_insensitive)
            .build()
            .map_err(|e| RetrievalError::Pattern {
                list: list.to_string(),
                index,
                message: e.to_string(),
            })?;
    }
    RegexSetBuilder::new(patterns)
        .case_insensitive(case_insensitive)
        .size_limit(64 << 20)
        .build()
        .map_err(|e| RetrievalError::Pattern {
            list: list.to_string(),
            index: 0,
            message: e.to_string(),
        })
}

/// Compiled pattern set; construction is the only place patterns can fail.
#[derive(Debug, Clone)]
pub struct Retriever {
    patterns: PatternSet,
    include: RegexSet,
    exclude: RegexSet,
}

impl Retriever {
    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn is_included(&self, text: &str) -> bool {
        self.include.is_match(text)
    }

    pub fn is_excluded(&self, text: &str) -> bool {
        self.exclude.is_match(text)
    }

    /// Include-then-exclude: a snippet hitting both lists is dropped.
    pub fn accepts(&self, text: &str) -> bool {
        self.is_included(text) && !self.is_excluded(text)
    }

    /// Snippets that match an include pattern and no exclude pattern, in input
    /// order, first occurrence of each snippet id only.
    pub fn retrieve(&self, snippets: &[Snippet]) -> Vec<Snippet> {
        let mut seen = HashSet::new();
        snippets
            .iter()
            .filter(|s| self.accepts(&s.text))
            .filter(|s| seen.insert(s.snippet_id.clone()))
            .cloned()
            .collect()
    }
}

pub fn retrieve(snippets: &[Snippet], retriever: &Retriever) -> Vec<Snippet> {
    retriever.retrieve(snippets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snip(id: &str, text: &str) -> Snippet {
        Snippet {
            snippet_id: id.into(),
            patient_id: "P".into(),
            note_id: "n".into(),
            note_type: "Progress Note".into(),
            start_token: 0,
            end_token: 1,
            text: text.into(),
        }
    }

    #[test]
    fn default_examples() {
        let r = PatternSet::default().compile().unwrap();
        assert!(r.accepts("patient has pulmonary hypertension"));
        assert!(r.accepts("elevated PASP noted on exam"));
        assert!(!r.accepts("pathology report unremarkable"));
        // known false-positive source: arterial pH
        assert!(r.accepts("pH 7.4 on arterial gas"));
    }

    #[test]
    fn echo_report_excluded_only_when_active() {
        let text =
            "TRANSTHORACIC ECHOCARDIOGRAM REPORT IMPRESSION: possible pulmonary hypertension";
        let off = PatternSet::default().compile().unwrap();
        assert!(off.accepts(text));
        let on = PatternSet::default()
            .with_exclusions(echo_ct_exclusion_patterns())
            .compile()
            .unwrap();
        assert!(!on.accepts(text));
        assert!(on.accepts(
            "Assessment: pulmonary arterial hypertension confirmed by RHC; CT chest reviewed."
        ));
    }

    #[test]
    fn retrieve_preserves_order_and_dedups() {
        let r = PatternSet::default().compile().unwrap();
        let s = vec![
            snip("a", "known CTEPH"),
            snip("b", "nothing here"),
            snip("c", "pHTN"),
            snip("a", "known CTEPH"),
        ];
        let got: Vec<_> = r.retrieve(&s).into_iter().map(|s| s.snippet_id).collect();
        assert_eq!(got, vec!["a", "c"]);
    }

    #[test]
    fn bad_pattern_is_config_error() {
        let p = PatternSet {
            include: vec!["ok".into(), "(unclosed".into()],
            exclude: vec![],
        };
        match p.compile() {
            Err(RetrievalError::Pattern { list, index, .. }) => {
                assert_eq!(list, "include");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = PatternSet {
            include: vec![],
            exclude: vec![],
        };
        assert!(empty.compile().is_err());
    }

    #[test]
    fn include_is_case_insensitive_exclude_is_not() {
        let p = PatternSet {
            include: vec!["ctEPH".into()],
            exclude: vec!["IMPRESSION:".into()],
        };
        let r = p.compile().unwrap();
        assert!(r.accepts("Known CTEPH, impression: stable"));
        assert!(!r.accepts("Known CTEPH, IMPRESSION: stable"));
    }
}
