use serde::{Deserialize, Serialize};

use super::{AggregationMethod, ContributingSnippet, PatientDecision};
use crate::llm_client::{BackendError, LlmClient};
use crate::prompting::{
    parse_answer, AnyPositiveTemplate, Decision, PromptError, PromptTemplate, SnippetVerdict,
};
use crate::retrieval::Tokenizer;

pub const CONTEXT_HEADER: &str = "Responses to review:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmReduceMode {
    SamePrompt,
    DifferentPrompt,
}

impl LlmReduceMode {
    pub fn method(self) -> AggregationMethod {
        match self {
            Self::SamePrompt => AggregationMethod::LlmSamePrompt,
            Self::DifferentPrompt => AggregationMethod::LlmDifferentPrompt,
        }
    }
}

fn contributing(verdicts: &[SnippetVerdict]) -> Vec<ContributingSnippet> {
    verdicts
        .iter()
        .map(|v| ContributingSnippet {
            snippet_id: v.snippet_id.clone(),
            decision: v.decision,
        })
        .collect()
}

/// Positive iff any verdict is positive; unparseable counts as negative.
pub fn reduce_max(patient_id: &str, verdicts: &[SnippetVerdict]) -> PatientDecision {
    PatientDecision {
        patient_id: patient_id.to_string(),
        decision: verdicts.iter().any(|v| v.decision.is_positive()),
        method: AggregationMethod::Max,
        contributing: contributing(verdicts),
        aggregate_response: None,
        degraded: false,
        unparseable: verdicts
            .iter()
            .filter(|v| v.decision == Decision::Unparseable)
            .count(),
        reduce_calls: 0,
    }
}

/// One line-pair per response in the aggregation context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEntry {
    pub id: String,
    pub decision: Decision,
    pub reasoning: String,
    /// Raw aggregation response, for entries produced by a tree level.
    pub raw: Option<String>,
}

impl ContextEntry {
    fn from_verdict(v: &SnippetVerdict) -> Self {
        Self {
            id: v.snippet_id.clone(),
            decision: v.decision,
            reasoning: v.reasoning.clone(),
            raw: None,
        }
    }

    fn render(&self) -> String {
        let reasoning = self
            .reasoning
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "[{}] decision: {}\nreasoning: {}",
            self.id,
            self.decision.as_str(),
            reasoning
        )
    }
}

pub fn render_context(entries: &[ContextEntry]) -> String {
    let mut out = String::from(CONTEXT_HEADER);
    for e in entries {
        out.push('\n');
        out.push_str(&e.render());
    }
    out
}

/// Token budget for one aggregation context. `None` means unbounded
/// (single-shot reduce).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReduceBudget {
    pub max_context_tokens: Option<usize>,
    pub tokenizer: Tokenizer,
}

impl ReduceBudget {
    pub fn unbounded() -> Self {
        Self {
            max_context_tokens: None,
            tokenizer: Tokenizer::Whitespace,
        }
    }

    fn fits(&self, entries: &[ContextEntry]) -> bool {
        match self.max_context_tokens {
            None => true,
            Some(max) => self.tokenizer.count(&render_context(entries)) <= max,
        }
    }
}

/// Everything needed to issue aggregation prompts.
pub struct LlmReducer<'a> {
    pub mode: LlmReduceMode,
    pub template: &'a PromptTemplate,
    pub any_positive: &'a AnyPositiveTemplate,
    pub client: &'a LlmClient,
    pub budget: ReduceBudget,
}

#[derive(Debug, thiserror::Error)]
pub enum ReduceError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl LlmReducer<'_> {
    fn ask(&self, entries: &[ContextEntry]) -> Result<(Decision, String, String), ReduceError> {
        let context = render_context(entries);
        let (prompt, multiple_choice) = match self.mode {
            LlmReduceMode::SamePrompt => (
                self.template.render_text(&context)?,
                self.template.multiple_choice,
            ),
            LlmReduceMode::DifferentPrompt => (
                self.any_positive
                    .render(&context, &self.template.amendments)?,
                self.any_positive.multiple_choice,
            ),
        };
        let raw = self.client.complete_prompt(prompt)?;
        let (decision, reasoning) = parse_answer(&raw, multiple_choice);
        Ok((decision, reasoning, raw))
    }

    /// Reduces entries to a single response, splitting into groups and
    /// reducing hierarchically while the context exceeds the budget.
    /// Returns (decision, final raw response, calls made).
    pub fn reduce_entries(
        &self,
        mut entries: Vec<ContextEntry>,
    ) -> Result<(Decision, String, usize), ReduceError> {
        let mut calls = 0;
        let mut level = 0;
        loop {
            if entries.len() == 1 && level > 0 {
                // last survivor of a tree level already is an LLM response
                let e = entries.pop().unwrap();
                return Ok((e.decision, e.raw.unwrap_or(e.reasoning), calls));
            }
            if self.budget.fits(&entries) || entries.len() == 1 {
                let (decision, _, raw) = self.ask(&entries)?;
                return Ok((decision, raw, calls + 1));
            }
            let groups = pack_groups(&entries, &self.budget);
            let mut next = Vec::with_capacity(groups.len());
            for (k, group) in groups.into_iter().enumerate() {
                if group.len() == 1 {
                    next.push(group.into_iter().next().unwrap());
                    continue;
                }
                let (decision, reasoning, raw) = self.ask(&group)?;
                calls += 1;
                next.push(ContextEntry {
                    id: format!("group-{}-{}", level + 1, k + 1),
                    decision,
                    reasoning: if reasoning.is_empty() {
                        raw.clone()
                    } else {
                        reasoning
                    },
                    raw: Some(raw),
                });
            }
            entries = next;
            level += 1;
        }
    }
}

/// Greedy packing into consecutive groups that fit the budget; every group
/// but possibly the last holds at least two entries so each level shrinks.
fn pack_groups(entries: &[ContextEntry], budget: &ReduceBudget) -> Vec<Vec<ContextEntry>> {
    let mut groups = Vec::new();
    let mut current: Vec<ContextEntry> = Vec::new();
    for e in entries {
        current.push(e.clone());
        if current.len() > 2 && !budget.fits(&current) {
            let overflow = current.pop().unwrap();
            groups.push(std::mem::take(&mut current));
            current.push(overflow);
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

/// LLM aggregation. Zero verdicts short-circuit to negative without a call;
/// a failed aggregation call falls back to max with `degraded` set.
pub fn reduce_llm(
    patient_id: &str,
    verdicts: &[SnippetVerdict],
    reducer: &LlmReducer<'_>,
) -> PatientDecision {
    let mut out = reduce_max(patient_id, verdicts);
    out.method = reducer.mode.method();
    if verdicts.is_empty() {
        return out;
    }
    let entries = verdicts.iter().map(ContextEntry::from_verdict).collect();
    match reducer.reduce_entries(entries) {
        Ok((decision, raw, calls)) => {
            out.decision = decision.is_positive();
            out.aggregate_response = Some(raw);
            out.reduce_calls = calls;
        }
        Err(e) => {
            log::warn!("patient {patient_id}: LLM aggregation failed ({e}); falling back to max");
            out.degraded = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_client::{ClientSettings, CompletionBackend, CompletionRequest};
    use crate::prompting::Design;
    use std::sync::Arc;

    fn v(id: &str, d: Decision, reasoning: &str) -> SnippetVerdict {
        SnippetVerdict {
            snippet_id: id.into(),
            decision: d,
            raw_response: String::new(),
            reasoning: reasoning.into(),
        }
    }

    fn oracle() -> LlmClient {
        LlmClient::from_config(&Default::default()).unwrap()
    }

    #[test]
    fn max_examples() {
        use Decision::*;
        assert!(reduce_max("p", &[v("1", Negative, ""), v("2", Positive, "")]).decision);
        assert!(!reduce_max("p", &[]).decision);
        let d = reduce_max("p", &[v("1", Negative, ""), v("2", Unparseable, "")]);
        assert!(!d.decision);
        assert_eq!(d.unparseable, 1);
    }

    #[test]
    fn different_prompt_reduce() {
        let client = oracle();
        let t = PromptTemplate::for_design(Design::A);
        let any = AnyPositiveTemplate::default();
        let r = LlmReducer {
            mode: LlmReduceMode::DifferentPrompt,
            template: &t,
            any_positive: &any,
            client: &client,
            budget: ReduceBudget::unbounded(),
        };
        let pos = [
            v("a", Decision::Positive, "note confirms PH"),
            v("b", Decision::Negative, "no mention"),
        ];
        let d = reduce_llm("p", &pos, &r);
        assert!(d.decision);
        assert_eq!(d.reduce_calls, 1);
        assert_eq!(d.method, AggregationMethod::LlmDifferentPrompt);
        let neg = [
            v("a", Decision::Negative, "x"),
            v("b", Decision::Negative, "y"),
        ];
        assert!(!reduce_llm("p", &neg, &r).decision);
        assert_eq!(client.stats().calls, 2);
        let none = reduce_llm("p", &[], &r);
        assert!(!none.decision);
        assert_eq!(client.stats().calls, 2);
    }

    #[test]
    fn tree_reduce_matches_flat() {
        let client = oracle();
        let t = PromptTemplate::for_design(Design::E);
        let any = AnyPositiveTemplate::default();
        let verdicts: Vec<_> = (0..100)
            .map(|i| {
                let d = if i == 73 {
                    Decision::Positive
                } else {
                    Decision::Negative
                };
                v(
                    &format!("n{i:03}#00000"),
                    d,
                    "the excerpt does not establish a diagnosis of the disease",
                )
            })
            .collect();
        for mode in [LlmReduceMode::SamePrompt, LlmReduceMode::DifferentPrompt] {
            let mk = |budget| LlmReducer {
                mode,
                template: &t,
                any_positive: &any,
                client: &client,
                budget,
            };
            let flat = reduce_llm("p", &verdicts, &mk(ReduceBudget::unbounded()));
            let tree = reduce_llm(
                "p",
                &verdicts,
                &mk(ReduceBudget {
                    max_context_tokens: Some(200),
                    tokenizer: Tokenizer::Whitespace,
                }),
            );
            assert_eq!(flat.reduce_calls, 1);
            assert!(tree.reduce_calls > 1);
            assert_eq!(flat.decision, tree.decision);
            assert!(tree.decision);
        }
    }

    struct Down;
    impl CompletionBackend for Down {
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            Err(BackendError::Fatal {
                status: Some(500),
                message: "down".into(),
            })
        }
    }

    #[test]
    fn failure_degrades_to_max() {
        let client = LlmClient::new(Arc::new(Down), ClientSettings::default()).unwrap();
        let t = PromptTemplate::for_design(Design::A);
        let any = AnyPositiveTemplate::default();
        let r = LlmReducer {
            mode: LlmReduceMode::SamePrompt,
            template: &t,
            any_positive: &any,
            client: &client,
            budget: ReduceBudget::unbounded(),
        };
        let d = reduce_llm("p", &[v("a", Decision::Positive, "")], &r);
        assert!(d.degraded);
        assert!(d.decision);
        assert_eq!(d.method, AggregationMethod::LlmSamePrompt);
    }

    #[test]
    fn packing_always_shrinks() {
        let tiny = ReduceBudget {
            max_context_tokens: Some(1),
            tokenizer: Tokenizer::Whitespace,
        };
        let entries: Vec<_> = (0..7)
            .map(|i| ContextEntry {
                id: i.to_string(),
                decision: Decision::Negative,
                reasoning: "long reasoning text".into(),
                raw: None,
            })
            .collect();
        let groups = pack_groups(&entries, &tiny);
        assert!(groups.len() < entries.len());
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), 7);
    }
}
