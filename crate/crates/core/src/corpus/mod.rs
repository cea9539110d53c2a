//! Patients, notes and structured events; record-file ingestion and the
//! synthetic cohort generator.

mod io;
mod model;
mod synth;

use std::path::PathBuf;

pub use io::{
    assemble, corpus_paths, ingest_corpus, parse_label, read_events, read_labels, read_notes,
    write_corpus, write_events, write_labels, write_notes, Ingested, LabelRow, EVENTS_FILE,
    LABELS_FILE, NOTES_FILE,
};
pub use model::{
    normalize_code, ClinicalNote, Corpus, PatientRecord, Split, StructuredEvent, Vocabulary,
    KNOWN_NOTE_TYPES,
};
pub use synth::{
    generate_cohort, CohortSpec, AFFIRMATIVE_SENTENCES, CT_NOTE_TYPE, ECHO_NOTE_TYPE,
    HEDGED_SENTENCES, PH_DIAGNOSIS_CODES, PH_MEDICATION_CODES,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate note_id `{note_id}` at line {line}")]
    DuplicateNote { note_id: String, line: usize },
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
}
