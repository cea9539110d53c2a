//! Note chunking and regex snippet retrieval.

mod chunk;
mod patterns;

pub use chunk::{chunk_note, snippet_id, ChunkerConfig, Snippet, Tokenizer};
pub use patterns::{
    echo_ct_exclusion_patterns, retrieve, shipped_pattern_config, PatternSet, Retriever,
};

use crate::corpus::PatientRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("chunker config: {0}")]
    Config(String),
    #[error("{list} pattern #{index} does not compile: {message}")]
    Pattern {
        list: String,
        index: usize,
        message: String,
    },
}

/// All snippets of a patient's notes, note by note.
pub fn chunk_patient(
    record: &PatientRecord,
    cfg: &ChunkerConfig,
) -> Result<Vec<Snippet>, RetrievalError> {
    let mut out = Vec::new();
    for note in &record.notes {
        out.extend(chunk_note(note, cfg)?);
    }
    Ok(out)
}
