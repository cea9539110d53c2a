//! Resumable experiment runs that stream decision records to disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::corpus::{Corpus, PatientRecord, Split};
use crate::decisions::{write_record, write_records, DecisionFileError, DecisionRecord, RunInfo};
use crate::evaluation::GoldLabel;
use crate::llm_client::ClientStats;
use crate::mapreduce::{Pipeline, PipelineError};
use crate::structured_phenotype::{classify_structured, RuleSet};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    DecisionFile(#[from] DecisionFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: holds records of run `{found}`, not `{expected}`")]
    ForeignRun {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<DecisionRecord>,
    /// Patients skipped because a previous run already recorded them.
    pub resumed: usize,
    pub stats: ClientStats,
}

/// Patients in `split` (all patients when `None`), in id order.
pub fn select_patients(corpus: &Corpus, split: Option<Split>) -> Vec<&PatientRecord> {
    match split {
        Some(s) => corpus.in_split(s).collect(),
        None => corpus.patients().collect(),
    }
}

pub fn gold_labels(corpus: &Corpus) -> BTreeMap<String, GoldLabel> {
    corpus
        .patients()
        .filter_map(|p| {
            p.gold_label.map(|label| {
                (
                    p.patient_id.clone(),
                    GoldLabel {
                        label,
                        split: p.split,
                    },
                )
            })
        })
        .collect()
}

/// Records of a partial run; a torn last line (interrupted write) is dropped.
fn read_partial(path: &Path, info: &RunInfo) -> Result<Vec<DecisionRecord>, ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(rec) = serde_json::from_str::<DecisionRecord>(&line) else {
            log::warn!("{}: dropping unreadable record line", path.display());
            continue;
        };
        if &rec.info != info {
            return Err(ExperimentError::ForeignRun {
                path: path.to_path_buf(),
                found: rec.info.run,
                expected: info.run.clone(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs the pipeline over `patients`, appending each record to `out` as it
/// finishes. With `resume`, patients already in `out` are skipped. The file
/// is rewritten sorted by patient id at the end.
pub fn run_llm(
    pipeline: &Pipeline,
    info: &RunInfo,
    patients: &[&PatientRecord],
    workers: usize,
    out: &Path,
    resume: bool,
) -> Result<RunOutcome, ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: out.to_path_buf(),
        source,
    };
    let wanted: BTreeSet<&str> = patients.iter().map(|p| p.patient_id.as_str()).collect();
    let mut previous = if resume && out.exists() {
        read_partial(out, info)?
    } else {
        Vec::new()
    };
    previous.retain(|r| wanted.contains(r.patient_id.as_str()));
    let mut seen = BTreeSet::new();
    previous.retain(|r| seen.insert(r.patient_id.clone()));
    let todo: Vec<&PatientRecord> = patients
        .iter()
        .copied()
        .filter(|p| !seen.contains(&p.patient_id))
        .collect();

    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    // rewrite the surviving prefix so a torn line cannot poison the append
    write_records(out, &previous)?;
    let file = OpenOptions::new().append(true).open(out).map_err(io_err)?;
    let sink = Mutex::new(BufWriter::new(file));
    let splits: BTreeMap<&str, Option<Split>> = todo
        .iter()
        .map(|p| (p.patient_id.as_str(), p.split))
        .collect();
    let written_err: Mutex<Option<std::io::Error>> = Mutex::new(None);

    let runs = pipeline.run_many(&todo, workers, |run| {
        let rec = DecisionRecord::from_run(info, splits[run.decision.patient_id.as_str()], run);
        let mut w = sink.lock().unwrap();
        if let Err(e) = write_record(&mut *w, &rec).and_then(|_| w.flush()) {
            written_err.lock().unwrap().get_or_insert(e);
        }
    })?;
    if let Some(e) = written_err.into_inner().unwrap() {
        return Err(io_err(e));
    }
    drop(sink);

    let resumed = previous.len();
    let mut records = previous;
    for (run, p) in runs.iter().zip(&todo) {
        records.push(DecisionRecord::from_run(info, p.split, run));
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    write_records(out, &records)?;
    Ok(RunOutcome {
        records,
        resumed,
        stats: pipeline.client.stats(),
    })
}

/// Structured-code baseline over `patients`.
pub fn run_structured(patients: &[&PatientRecord], rules: &RuleSet) -> Vec<DecisionRecord> {
    let info = RunInfo::structured();
    patients
        .iter()
        .map(|p| {
            let mut matched: Vec<String> = p
                .events
                .iter()
                .filter(|e| rules.is_diagnostic(e) || rules.is_medication(e))
                .map(|e| format!("{}:{}", e.vocabulary, e.normalized_code()))
                .collect();
            matched.sort();
            matched.dedup();
            DecisionRecord {
                info: info.clone(),
                patient_id: p.patient_id.clone(),
                split: p.split,
                decision: classify_structured(p, rules),
                contributing: Vec::new(),
                note_types: BTreeMap::new(),
                aggregate_response: None,
                degraded: false,
                unparseable: 0,
                reduce_calls: 0,
                matched_codes: matched,
            }
        })
        .collect()
}
