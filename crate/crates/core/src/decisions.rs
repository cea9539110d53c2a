//! Per-patient decision records: one JSON object per line, each carrying the
//! run configuration it came from plus its provenance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::mapreduce::{AggregationMethod, ContributingSnippet, PatientRun};
use crate::prompting::Design;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    #[default]
    None,
    Regex,
    PromptAmended,
}

impl ExclusionMode {
    pub const ALL: [ExclusionMode; 3] = [Self::None, Self::Regex, Self::PromptAmended];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Regex => "regex",
            Self::PromptAmended => "prompt_amended",
        }
    }
}

impl fmt::Display for ExclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExclusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "regex" => Ok(Self::Regex),
            "prompt_amended" => Ok(Self::PromptAmended),
            other => Err(format!(
                "unknown exclusion mode `{other}` (expected none, regex or prompt_amended)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Structured,
    Llm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Structured => "structured",
            Self::Llm => "llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunInfo {
    pub run: String,
    pub model: ModelKind,
    pub prompt: Option<Design>,
    pub aggregation: Option<AggregationMethod>,
    pub exclusion: Option<ExclusionMode>,
}

impl RunInfo {
    pub fn llm(prompt: Design, aggregation: AggregationMethod, exclusion: ExclusionMode) -> Self {
        Self {
            run: format!("llm-{prompt}-{aggregation}-{exclusion}"),
            model: ModelKind::Llm,
            prompt: Some(prompt),
            aggregation: Some(aggregation),
            exclusion: Some(exclusion),
        }
    }

    pub fn structured() -> Self {
        Self {
            run: "structured".into(),
            model: ModelKind::Structured,
            prompt: None,
            aggregation: None,
            exclusion: None,
        }
    }

    pub fn file_name(&self) -> String {
        format!("decisions-{}.jsonl", self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    #[serde(flatten)]
    pub info: RunInfo,
    pub patient_id: String,
    pub split: Option<Split>,
    pub decision: bool,
    #[serde(default)]
    pub contributing: Vec<ContributingSnippet>,
    /// Retrieved snippet count per note type.
    #[serde(default)]
    pub note_types: BTreeMap<String, usize>,
    #[serde(default)]
    pub aggregate_response: Option<String>,
    #[serde(default)]
    pub degraded: bool,
    #[serde(default)]
    pub unparseable: usize,
    #[serde(default)]
    pub reduce_calls: usize,
    /// Structured baseline: codes that fired.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched_codes: Vec<String>,
}

impl DecisionRecord {
    pub fn from_run(info: &RunInfo, split: Option<Split>, run: &PatientRun) -> Self {
        Self {
            info: info.clone(),
            patient_id: run.decision.patient_id.clone(),
            split,
            decision: run.decision.decision,
            contributing: run.decision.contributing.clone(),
            note_types: run.note_type_counts(),
            aggregate_response: run.decision.aggregate_response.clone(),
            degraded: run.decision.degraded,
            unparseable: run.decision.unparseable,
            reduce_calls: run.decision.reduce_calls,
            matched_codes: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecisionFileError {
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
    #[error("{path}: records from more than one run ({runs})")]
    MixedRuns { path: PathBuf, runs: String },
    #[error("{path}: no decision records")]
    Empty { path: PathBuf },
}

/// All records of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDecisions {
    pub info: RunInfo,
    pub records: Vec<DecisionRecord>,
}

impl RunDecisions {
    pub fn decisions(&self) -> BTreeMap<String, bool> {
        self.records
            .iter()
            .map(|r| (r.patient_id.clone(), r.decision))
            .collect()
    }
}

pub fn read_records(path: &Path) -> Result<Vec<DecisionRecord>, DecisionFileError> {
    let io_err = |source| DecisionFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DecisionFileError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Reads a decision file and checks that it holds exactly one run.
pub fn read_run(path: &Path) -> Result<RunDecisions, DecisionFileError> {
    let records = read_records(path)?;
    let runs: BTreeSet<&RunInfo> = records.iter().map(|r| &r.info).collect();
    match runs.len() {
        0 => Err(DecisionFileError::Empty {
            path: path.to_path_buf(),
        }),
        1 => Ok(RunDecisions {
            info: records[0].info.clone(),
            records,
        }),
        _ => Err(DecisionFileError::MixedRuns {
            path: path.to_path_buf(),
            runs: runs
                .iter()
                .map(|r| r.run.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        }),
    }
}

pub fn write_record(w: &mut dyn Write, record: &DecisionRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Writes records sorted by patient id, replacing `path` atomically.
pub fn write_records(path: &Path, records: &[DecisionRecord]) -> Result<(), DecisionFileError> {
    let io_err = |source| DecisionFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut sorted: Vec<&DecisionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        for r in sorted {
            write_record(&mut w, r).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(info: &RunInfo, pid: &str, d: bool) -> DecisionRecord {
        DecisionRecord {
            info: info.clone(),
            patient_id: pid.into(),
            split: Some(Split::Test),
            decision: d,
            contributing: vec![],
            note_types: BTreeMap::new(),
            aggregate_response: None,
            degraded: false,
            unparseable: 0,
            reduce_calls: 0,
            matched_codes: vec![],
        }
    }

    #[test]
    fn write_read_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let info = RunInfo::llm(Design::A, AggregationMethod::Max, ExclusionMode::Regex);
        write_records(&path, &[rec(&info, "P2", true), rec(&info, "P1", false)]).unwrap();
        let run = read_run(&path).unwrap();
        assert_eq!(run.info, info);
        assert_eq!(run.records[0].patient_id, "P1");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"run\":\"llm-A-max-regex\""));
    }

    #[test]
    fn mixed_runs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let a = RunInfo::structured();
        let b = RunInfo::llm(Design::E, AggregationMethod::Max, ExclusionMode::None);
        write_records(&path, &[rec(&a, "P1", true), rec(&b, "P2", true)]).unwrap();
        assert!(matches!(
            read_run(&path),
            Err(DecisionFileError::MixedRuns { .. })
        ));
    }

    #[test]
    fn exclusion_mode_parse() {
        assert_eq!(
            "prompt_amended".parse::<ExclusionMode>().unwrap(),
            ExclusionMode::PromptAmended
        );
        let e = "regexp".parse::<ExclusionMode>().unwrap_err();
        assert!(e.contains("regexp"));
    }
}
