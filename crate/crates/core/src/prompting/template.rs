use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::retrieval::Snippet;

pub const SNIPPET_TEMPLATE: &str = include_str!("../../templates/snippet.txt");
pub const ANY_POSITIVE_TEMPLATE: &str = include_str!("../../templates/any_positive.txt");

pub const COT_PHRASE: &str = "let's think step-by-step";
const COT_TEXT: &str = "Before answering, let's think step-by-step.";
const EXPLAIN_TEXT: &str = "Explain your reasoning.";
const OPTIONS_TEXT: &str =
    "Options:\n(a) Yes\n(b) No\nBegin your reply with \"Answer:\" followed by the letter of your choice.";
const YES_NO_TEXT: &str = "Begin your reply with \"Answer:\" followed by yes or no.";

const STEERING_STRICT: &str = "Only an established diagnosis counts. \
If the excerpt describes a possible, suspected, or probable diagnosis, answer no. \
If the excerpt describes a history of the disease, answer yes.";
const STEERING_LENIENT: &str = "If the excerpt describes a history of the disease, answer no. \
If the excerpt describes a possible, suspected, or probable diagnosis, answer yes.";

pub const DISREGARD_IMAGING: &str = "disregard_imaging";
const DISREGARD_IMAGING_TEXT: &str =
    "Disregard any findings that appear only in echocardiogram (ECHO) \
or computed tomography (CT) reports; such reports alone do not establish a diagnosis.";

/// Text of a registered amendment.
pub fn amendment_text(id: &str) -> Option<&'static str> {
    match id {
        DISREGARD_IMAGING => Some(DISREGARD_IMAGING_TEXT),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    A,
    B,
    C,
    D,
    E,
}

impl Design {
    pub const ALL: [Design; 5] = [Design::A, Design::B, Design::C, Design::D, Design::E];

    /// (steering, cot, multiple_choice, explain_reasoning)
    pub fn features(self) -> (bool, bool, bool, bool) {
        match self {
            Design::A => (true, true, true, true),
            Design::B => (true, true, false, true),
            Design::C => (true, true, false, false),
            Design::D => (true, false, true, true),
            Design::E => (true, false, false, true),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Design::A => "A",
            Design::B => "B",
            Design::C => "C",
            Design::D => "D",
            Design::E => "E",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Design::A),
            "B" => Ok(Design::B),
            "C" => Ok(Design::C),
            "D" => Ok(Design::D),
            "E" => Ok(Design::E),
            other => Err(format!("unknown prompt design `{other}` (expected A-E)")),
        }
    }
}

/// How "history of" and "possible" mentions are mapped to yes/no.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringPolarity {
    /// possible -> no, history of -> yes
    #[default]
    Strict,
    /// history of -> no, possible -> yes
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub design: Design,
    pub steering: bool,
    pub steering_polarity: SteeringPolarity,
    pub cot: bool,
    pub multiple_choice: bool,
    pub explain_reasoning: bool,
    pub body: String,
    pub amendments: Vec<String>,
}

impl PromptTemplate {
    /// The shipped template for `design` with its feature flags.
    pub fn for_design(design: Design) -> Self {
        let (steering, cot, multiple_choice, explain_reasoning) = design.features();
        Self {
            design,
            steering,
            steering_polarity: SteeringPolarity::Strict,
            cot,
            multiple_choice,
            explain_reasoning,
            body: SNIPPET_TEMPLATE.to_string(),
            amendments: Vec::new(),
        }
    }

    pub fn with_amendment(mut self, id: &str) -> Self {
        if !self.amendments.iter().any(|a| a == id) {
            self.amendments.push(id.to_string());
        }
        self
    }

    pub fn with_polarity(mut self, polarity: SteeringPolarity) -> Self {
        self.steering_polarity = polarity;
        self
    }

    pub fn with_body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !self.body.contains("{snippet}") {
            return Err(PromptError::Config(
                "template body lacks a {snippet} placeholder".into(),
            ));
        }
        for a in &self.amendments {
            if amendment_text(a).is_none() {
                return Err(PromptError::UnknownAmendment(a.clone()));
            }
        }
        Ok(())
    }

    pub fn steering_text(&self) -> &'static str {
        if !self.steering {
            return "";
        }
        match self.steering_polarity {
            SteeringPolarity::Strict => STEERING_STRICT,
            SteeringPolarity::Lenient => STEERING_LENIENT,
        }
    }

    fn amendments_text(&self) -> Result<String, PromptError> {
        let parts = self
            .amendments
            .iter()
            .map(|a| amendment_text(a).ok_or_else(|| PromptError::UnknownAmendment(a.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join("\n"))
    }

    fn fill(&self, slot_name: &str, content: &str) -> Result<String, PromptError> {
        let amendments = self.amendments_text()?;
        let options = if self.multiple_choice {
            OPTIONS_TEXT
        } else {
            YES_NO_TEXT
        };
        let explain = if self.explain_reasoning {
            EXPLAIN_TEXT
        } else {
            ""
        };
        let cot = if self.cot { COT_TEXT } else { "" };
        Ok(substitute(&self.body, |name| match name {
            n if n == slot_name => Some(content),
            "steering" => Some(self.steering_text()),
            "amendments" => Some(amendments.as_str()),
            "options" => Some(options),
            "explain" => Some(explain),
            "cot" => Some(cot),
            _ => None,
        }))
    }

    /// Renders the template around `text` placed in the `{snippet}` slot.
    pub fn render_text(&self, text: &str) -> Result<String, PromptError> {
        if text.trim().is_empty() {
            return Err(PromptError::EmptySnippet);
        }
        self.validate()?;
        self.fill("snippet", text)
    }
}

pub fn render_prompt(template: &PromptTemplate, snippet: &Snippet) -> Result<String, PromptError> {
    template.render_text(&snippet.text)
}

/// Prompt for LLM aggregation that asks whether any response was positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnyPositiveTemplate {
    pub body: String,
    pub multiple_choice: bool,
    pub explain_reasoning: bool,
}

impl Default for AnyPositiveTemplate {
    fn default() -> Self {
        Self {
            body: ANY_POSITIVE_TEMPLATE.to_string(),
            multiple_choice: true,
            explain_reasoning: true,
        }
    }
}

impl AnyPositiveTemplate {
    pub fn render(&self, responses: &str, amendments: &[String]) -> Result<String, PromptError> {
        if !self.body.contains("{responses}") {
            return Err(PromptError::Config(
                "aggregation template lacks a {responses} placeholder".into(),
            ));
        }
        let amendment_block = amendments
            .iter()
            .map(|a| amendment_text(a).ok_or_else(|| PromptError::UnknownAmendment(a.clone())))
            .collect::<Result<Vec<_>, _>>()?
            .join("\n");
        let options = if self.multiple_choice {
            OPTIONS_TEXT
        } else {
            YES_NO_TEXT
        };
        let explain = if self.explain_reasoning {
            EXPLAIN_TEXT
        } else {
            ""
        };
        Ok(substitute(&self.body, |name| match name {
            "responses" => Some(responses),
            "amendments" => Some(amendment_block.as_str()),
            "options" => Some(options),
            "explain" => Some(explain),
            _ => None,
        }))
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Single-pass placeholder substitution, line by line. A line consisting of
/// nothing but a placeholder that resolves to empty text is dropped.
/// Substituted text is never rescanned.
fn substitute<'a>(body: &str, lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    let re = placeholder_re();
    let mut out: Vec<String> = Vec::new();
    for line in body.lines() {
        let trimmed = line.trim();
        if let Some(c) = re.captures(trimmed) {
            if c.get(0).unwrap().as_str() == trimmed && lookup(&c[1]) == Some("") {
                continue;
            }
        }
        let mut rendered = String::with_capacity(line.len());
        let mut last = 0;
        for c in re.captures_iter(line) {
            let m = c.get(0).unwrap();
            rendered.push_str(&line[last..m.start()]);
            match lookup(&c[1]) {
                Some(v) => rendered.push_str(v),
                None => rendered.push_str(m.as_str()),
            }
            last = m.end();
        }
        rendered.push_str(&line[last..]);
        out.push(rendered);
    }
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower(s: &str) -> String {
        s.to_lowercase()
    }

    #[test]
    fn design_a_has_every_feature() {
        let p = PromptTemplate::for_design(Design::A)
            .render_text("Known CTEPH.")
            .unwrap();
        assert!(p.contains("Known CTEPH."));
        assert!(p.contains(COT_PHRASE));
        assert!(p.contains("(a) Yes"));
        assert!(p.contains(STEERING_STRICT));
        assert!(lower(&p).contains("explain your reasoning"));
    }

    #[test]
    fn design_e_is_steering_only() {
        let p = PromptTemplate::for_design(Design::E)
            .render_text("Known CTEPH.")
            .unwrap();
        assert!(!p.contains(COT_PHRASE));
        assert!(!p.contains("(a) Yes"));
        assert!(p.contains(STEERING_STRICT));
    }

    #[test]
    fn design_c_drops_explain_phrase() {
        let p = PromptTemplate::for_design(Design::C)
            .render_text("x")
            .unwrap();
        assert!(!lower(&p).contains("explain your reasoning"));
        assert!(p.contains(COT_PHRASE));
        for d in [Design::A, Design::B, Design::D, Design::E] {
            let p = PromptTemplate::for_design(d).render_text("x").unwrap();
            assert!(lower(&p).contains("explain your reasoning"), "{d}");
        }
    }

    #[test]
    fn imaging_amendment_added() {
        let t = PromptTemplate::for_design(Design::A);
        assert!(!t.render_text("x").unwrap().contains(DISREGARD_IMAGING_TEXT));
        let p = t
            .with_amendment(DISREGARD_IMAGING)
            .render_text("x")
            .unwrap();
        assert!(p.contains(DISREGARD_IMAGING_TEXT));
    }

    #[test]
    fn unknown_amendment_rejected() {
        let t = PromptTemplate::for_design(Design::B).with_amendment("shout");
        assert!(
            matches!(t.render_text("x"), Err(PromptError::UnknownAmendment(id)) if id == "shout")
        );
    }

    #[test]
    fn empty_snippet_rejected() {
        assert!(matches!(
            PromptTemplate::for_design(Design::A).render_text("  "),
            Err(PromptError::EmptySnippet)
        ));
    }

    #[test]
    fn placeholder_in_snippet_is_not_expanded() {
        let p = PromptTemplate::for_design(Design::E)
            .render_text("see {options} and {cot}")
            .unwrap();
        assert!(p.contains("see {options} and {cot}"));
    }

    #[test]
    fn polarity_switch() {
        let t = PromptTemplate::for_design(Design::A).with_polarity(SteeringPolarity::Lenient);
        let p = t.render_text("x").unwrap();
        assert!(p.contains(STEERING_LENIENT));
        assert!(!p.contains(STEERING_STRICT));
    }

    #[test]
    fn template_without_snippet_slot_rejected() {
        let t = PromptTemplate::for_design(Design::A).with_body("no slot here");
        assert!(matches!(t.render_text("x"), Err(PromptError::Config(_))));
    }

    #[test]
    fn any_positive_renders_responses() {
        let p = AnyPositiveTemplate::default()
            .render("[s1] decision: positive", &[])
            .unwrap();
        assert!(p.contains("[s1] decision: positive"));
        assert!(p.contains("(a) Yes"));
    }
}
