use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::template::PromptTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
    Unparseable,
}

impl Decision {
    pub fn is_positive(self) -> bool {
        self == Decision::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Positive => "positive",
            Decision::Negative => "negative",
            Decision::Unparseable => "unparseable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetVerdict {
    pub snippet_id: String,
    pub decision: Decision,
    pub raw_response: String,
    pub reasoning: String,
}

impl SnippetVerdict {
    /// Verdict for a snippet whose query failed outright.
    pub fn failed(snippet_id: impl Into<String>, error: impl std::fmt::Display) -> Self {
        Self {
            snippet_id: snippet_id.into(),
            decision: Decision::Unparseable,
            raw_response: String::new(),
            reasoning: format!("query failed: {error}"),
        }
    }
}

struct Patterns {
    mc_answer: Regex,
    option: Regex,
    yn_answer: Regex,
    yn_leading: Regex,
    yn_tail: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        mc_answer: Regex::new(r"(?i)\banswer\b(?:\s+is)?\s*[:\-]?\s*\(\s*([ab])\s*\)").unwrap(),
        option: Regex::new(r"(?i)\(\s*([ab])\s*\)").unwrap(),
        yn_answer: Regex::new(
            r"(?i)\banswer\b(?:\s+is)?\s*[:\-]?\s*(?:\(\s*[ab]\s*\)\s*)?\b(yes|no)\b",
        )
        .unwrap(),
        yn_leading: Regex::new(r"(?i)(?:^|[.!?:;\n])\s*(yes|no)\b").unwrap(),
        yn_tail: Regex::new(r"(?i)^\s*(?:yes|no)\b").unwrap(),
    })
}

fn reasoning_around(raw: &str, end: usize, start: usize) -> String {
    let p = patterns();
    let mut tail = &raw[end..];
    if let Some(m) = p.yn_tail.find(tail) {
        tail = &tail[m.end()..];
    }
    let tail = tail
        .trim_start_matches(|c: char| c.is_whitespace() || ".,:;!-)".contains(c))
        .trim_end();
    if !tail.is_empty() {
        return tail.to_string();
    }
    raw[..start].trim().to_string()
}

fn from_yes_no(word: &str) -> Decision {
    if word.eq_ignore_ascii_case("yes") {
        Decision::Positive
    } else {
        Decision::Negative
    }
}

fn from_option(letter: &str) -> Decision {
    if letter.eq_ignore_ascii_case("a") {
        Decision::Positive
    } else {
        Decision::Negative
    }
}

/// Extracts a decision from free text. Never fails: text without a
/// recognisable answer token is `Unparseable`.
pub fn parse_answer(raw: &str, multiple_choice: bool) -> (Decision, String) {
    let p = patterns();
    if multiple_choice {
        if let Some(c) = p.mc_answer.captures(raw) {
            let m = c.get(0).unwrap();
            return (
                from_option(&c[1]),
                reasoning_around(raw, m.end(), m.start()),
            );
        }
        let letters: BTreeSet<String> = p
            .option
            .captures_iter(raw)
            .map(|c| c[1].to_ascii_lowercase())
            .collect();
        if letters.len() == 1 {
            let c = p.option.captures(raw).unwrap();
            let m = c.get(0).unwrap();
            return (
                from_option(&c[1]),
                reasoning_around(raw, m.end(), m.start()),
            );
        }
    }
    if let Some(c) = p.yn_answer.captures(raw) {
        let m = c.get(0).unwrap();
        return (
            from_yes_no(&c[1]),
            reasoning_around(raw, m.end(), m.start()),
        );
    }
    if let Some(c) = p.yn_leading.captures(raw) {
        let m = c.get(1).unwrap();
        return (
            from_yes_no(m.as_str()),
            reasoning_around(raw, m.end(), m.start()),
        );
    }
    (Decision::Unparseable, raw.trim().to_string())
}

pub fn parse_response(snippet_id: &str, raw: &str, template: &PromptTemplate) -> SnippetVerdict {
    let (decision, reasoning) = parse_answer(raw, template.multiple_choice);
    SnippetVerdict {
        snippet_id: snippet_id.to_string(),
        decision,
        raw_response: raw.to_string(),
        reasoning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Design;

    fn t(d: Design) -> PromptTemplate {
        PromptTemplate::for_design(d)
    }

    #[test]
    fn mc_answer_with_reasoning() {
        let v = parse_response(
            "s",
            "Answer: (a) Yes. The note states a confirmed diagnosis of PH.",
            &t(Design::A),
        );
        assert_eq!(v.decision, Decision::Positive);
        assert_eq!(v.reasoning, "The note states a confirmed diagnosis of PH.");
    }

    #[test]
    fn bare_no() {
        let v = parse_response("s", "no", &t(Design::E));
        assert_eq!(v.decision, Decision::Negative);
    }

    #[test]
    fn equivocal_is_unparseable() {
        let v = parse_response("s", "The findings are equivocal.", &t(Design::E));
        assert_eq!(v.decision, Decision::Unparseable);
        let v = parse_response("s", "The findings are equivocal.", &t(Design::A));
        assert_eq!(v.decision, Decision::Unparseable);
    }

    #[test]
    fn cot_reasoning_before_answer() {
        let raw = "The excerpt mentions an RHC with mPAP 38. Therefore the answer is (a).";
        let v = parse_response("s", raw, &t(Design::A));
        assert_eq!(v.decision, Decision::Positive);
        assert!(v.reasoning.starts_with("The excerpt mentions"));
    }

    #[test]
    fn echoed_options_fall_back_to_answer_word() {
        let raw = "Options were (a) Yes and (b) No. Answer: no, only a possible diagnosis.";
        let v = parse_response("s", raw, &t(Design::D));
        assert_eq!(v.decision, Decision::Negative);
        assert_eq!(v.reasoning, "only a possible diagnosis.");
    }

    #[test]
    fn yes_inside_word_not_an_answer() {
        let v = parse_response("s", "Eyes are normal; nothing notable.", &t(Design::E));
        assert_eq!(v.decision, Decision::Unparseable);
    }

    #[test]
    fn sentence_initial_yes() {
        let v = parse_response(
            "s",
            "Let me see. Yes, the patient has CTEPH.",
            &t(Design::B),
        );
        assert_eq!(v.decision, Decision::Positive);
        assert_eq!(v.reasoning, "the patient has CTEPH.");
    }

    #[test]
    fn non_mc_template_reads_mc_style_reply() {
        let v = parse_response("s", "Answer: (b) No. Only hedged language.", &t(Design::E));
        assert_eq!(v.decision, Decision::Negative);
    }
}
