//! Map phase (one LLM query per retrieved snippet) and reduce phase
//! (patient-level decision by max or LLM aggregation).

mod reduce;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

pub use reduce::{
    reduce_llm, reduce_max, render_context, ContextEntry, LlmReduceMode, LlmReducer, ReduceBudget,
    ReduceError, CONTEXT_HEADER,
};

use crate::corpus::PatientRecord;
use crate::llm_client::LlmClient;
use crate::prompting::{
    parse_response, AnyPositiveTemplate, Decision, PromptError, PromptTemplate, SnippetVerdict,
};
use crate::retrieval::{chunk_patient, ChunkerConfig, RetrievalError, Retriever, Snippet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    Max,
    LlmSamePrompt,
    LlmDifferentPrompt,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 3] =
        [Self::LlmSamePrompt, Self::LlmDifferentPrompt, Self::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::LlmSamePrompt => "llm_same_prompt",
            Self::LlmDifferentPrompt => "llm_different_prompt",
        }
    }

    pub fn llm_mode(self) -> Option<LlmReduceMode> {
        match self {
            Self::Max => None,
            Self::LlmSamePrompt => Some(LlmReduceMode::SamePrompt),
            Self::LlmDifferentPrompt => Some(LlmReduceMode::DifferentPrompt),
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "llm_same_prompt" => Ok(Self::LlmSamePrompt),
            "llm_different_prompt" => Ok(Self::LlmDifferentPrompt),
            other => Err(format!(
                "unknown aggregation `{other}` (expected max, llm_same_prompt or llm_different_prompt)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributingSnippet {
    pub snippet_id: String,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDecision {
    pub patient_id: String,
    pub decision: bool,
    pub method: AggregationMethod,
    pub contributing: Vec<ContributingSnippet>,
    pub aggregate_response: Option<String>,
    /// LLM aggregation failed and the decision fell back to max.
    pub degraded: bool,
    pub unparseable: usize,
    pub reduce_calls: usize,
}

/// One verdict per snippet, sorted by snippet id whatever the completion
/// order. Query failures become unparseable verdicts.
pub fn map_phase(
    snippets: &[Snippet],
    template: &PromptTemplate,
    client: &LlmClient,
) -> Result<Vec<SnippetVerdict>, PromptError> {
    template.validate()?;
    if snippets.is_empty() {
        return Ok(Vec::new());
    }
    let workers = client.settings().max_concurrency.min(snippets.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<SnippetVerdict>> = Mutex::new(Vec::with_capacity(snippets.len()));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(snippet) = snippets.get(i) else {
                    break;
                };
                let verdict = query_snippet(snippet, template, client);
                results.lock().unwrap().push(verdict);
            });
        }
    });
    let mut verdicts = results.into_inner().unwrap();
    verdicts.sort_by(|a, b| a.snippet_id.cmp(&b.snippet_id));
    Ok(verdicts)
}

fn query_snippet(
    snippet: &Snippet,
    template: &PromptTemplate,
    client: &LlmClient,
) -> SnippetVerdict {
    let prompt = match template.render_text(&snippet.text) {
        Ok(p) => p,
        Err(e) => return SnippetVerdict::failed(&snippet.snippet_id, e),
    };
    match client.complete_prompt(prompt) {
        Ok(raw) => parse_response(&snippet.snippet_id, &raw, template),
        Err(e) => {
            log::warn!("snippet {}: {e}", snippet.snippet_id);
            SnippetVerdict::failed(&snippet.snippet_id, e)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Everything a patient run needs: chunk -> retrieve -> map -> reduce.
pub struct Pipeline {
    pub chunker: ChunkerConfig,
    pub retriever: Retriever,
    pub template: PromptTemplate,
    pub aggregation: AggregationMethod,
    pub any_positive: AnyPositiveTemplate,
    pub reduce_budget: ReduceBudget,
    pub client: Arc<LlmClient>,
}

/// Result of one patient run with full provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRun {
    pub decision: PatientDecision,
    pub retrieved: Vec<Snippet>,
    pub verdicts: Vec<SnippetVerdict>,
}

impl PatientRun {
    /// Retrieved snippet count per note type.
    pub fn note_type_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.retrieved {
            *counts.entry(s.note_type.clone()).or_insert(0) += 1;
        }
        counts
    }
}

impl Pipeline {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.chunker.validate()?;
        self.template.validate()?;
        Ok(())
    }

    pub fn retrieve(&self, record: &PatientRecord) -> Result<Vec<Snippet>, PipelineError> {
        let snippets = chunk_patient(record, &self.chunker)?;
        Ok(self.retriever.retrieve(&snippets))
    }

    pub fn run_patient(&self, record: &PatientRecord) -> Result<PatientRun, PipelineError> {
        let retrieved = self.retrieve(record)?;
        let verdicts = map_phase(&retrieved, &self.template, &self.client)?;
        let decision = match self.aggregation.llm_mode() {
            None => reduce_max(&record.patient_id, &verdicts),
            Some(mode) => {
                let reducer = LlmReducer {
                    mode,
                    template: &self.template,
                    any_positive: &self.any_positive,
                    client: &self.client,
                    budget: self.reduce_budget,
                };
                reduce_llm(&record.patient_id, &verdicts, &reducer)
            }
        };
        Ok(PatientRun {
            decision,
            retrieved,
            verdicts,
        })
    }

    /// Runs patients concurrently on `workers` threads; snippet queries share
    /// the client's global admission limit. `on_done` sees each run as it
    /// finishes; the returned runs are in input order.
    pub fn run_many(
        &self,
        patients: &[&PatientRecord],
        workers: usize,
        on_done: impl Fn(&PatientRun) + Sync,
    ) -> Result<Vec<PatientRun>, PipelineError> {
        self.validate()?;
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<PatientRun, PipelineError>>>> =
            Mutex::new((0..patients.len()).map(|_| None).collect());
        let workers = workers.max(1).min(patients.len().max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(record) = patients.get(i) else { break };
                    let result = self.run_patient(record);
                    if let Ok(run) = &result {
                        on_done(run);
                    }
                    slots.lock().unwrap()[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every patient processed"))
            .collect()
    }
}
