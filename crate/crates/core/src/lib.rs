//! Phenotyping from clinical notes: regex snippet retrieval, a MapReduce of
//! zero-shot LLM queries over the retrieved snippets, a structured-code
//! baseline, and precision/recall/F1 evaluation against gold labels.

pub mod config;
pub mod corpus;
pub mod decisions;
pub mod evaluation;
pub mod experiment;
pub mod llm_client;
pub mod mapreduce;
pub mod prompting;
pub mod retrieval;
pub mod structured_phenotype;

pub use config::{ConfigError, PipelineConfig};
pub use corpus::{ClinicalNote, Corpus, PatientRecord, Split, StructuredEvent, Vocabulary};
pub use decisions::{DecisionRecord, ExclusionMode, RunInfo};
pub use evaluation::{compare_report, score, ConfusionMatrix, EvalReport};
pub use mapreduce::{AggregationMethod, Pipeline};
pub use prompting::Design;
