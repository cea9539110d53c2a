//! Line-delimited record files.
//!
//! * notes: one JSON object per line `{patient_id, note_id, note_type, timestamp, text}`
//! * events: one JSON object per line `{patient_id, vocabulary, code, date}`
//! * labels: CSV with header `patient_id,label,split`; label is `1`/`0`
//!   (also accepts `true`/`false`, `case`/`control`), split may be empty.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::model::{ClinicalNote, Corpus, Split, StructuredEvent};
use super::CorpusError;

pub const NOTES_FILE: &str = "notes.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const LABELS_FILE: &str = "labels.csv";

/// Result of an ingestion: the corpus plus non-fatal findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub patient_id: String,
    pub label: Option<bool>,
    pub split: Option<Split>,
}

pub fn ingest_corpus(
    notes_path: &Path,
    events_path: &Path,
    labels_path: &Path,
) -> Result<Ingested, CorpusError> {
    let notes = read_notes(open(notes_path)?, notes_path)?;
    let events = read_events(open(events_path)?, events_path)?;
    let labels = read_labels(open(labels_path)?, labels_path)?;
    Ok(assemble(notes, events, labels))
}

/// Builds a corpus from already-parsed records. Labels for patients with no
/// notes or events are retained (with a warning).
pub fn assemble(
    notes: Vec<ClinicalNote>,
    events: Vec<StructuredEvent>,
    labels: Vec<LabelRow>,
) -> Ingested {
    let mut corpus = Corpus::new();
    let mut warnings = Vec::new();
    for note in notes {
        corpus.entry(&note.patient_id.clone()).notes.push(note);
    }
    for event in events {
        corpus.entry(&event.patient_id.clone()).events.push(event);
    }
    for row in labels {
        if corpus.get(&row.patient_id).is_none() {
            let msg = format!(
                "label for patient `{}` which has no notes or events; retained with empty record",
                row.patient_id
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let record = corpus.entry(&row.patient_id);
        record.gold_label = row.label;
        record.split = row.split;
    }
    Ingested { corpus, warnings }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    reader: impl BufRead,
    path: &Path,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, value));
    }
    Ok(out)
}

pub fn read_notes(reader: impl BufRead, path: &Path) -> Result<Vec<ClinicalNote>, CorpusError> {
    let mut seen = HashSet::new();
    let mut notes = Vec::new();
    for (line, note) in read_jsonl::<ClinicalNote>(reader, path)? {
        if note.patient_id.trim().is_empty() || note.note_id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty patient_id or note_id".into(),
            });
        }
        if !seen.insert(note.note_id.clone()) {
            return Err(CorpusError::DuplicateNote {
                note_id: note.note_id,
                line,
            });
        }
        notes.push(note);
    }
    Ok(notes)
}

pub fn read_events(reader: impl BufRead, path: &Path) -> Result<Vec<StructuredEvent>, CorpusError> {
    let mut events = Vec::new();
    for (line, event) in read_jsonl::<StructuredEvent>(reader, path)? {
        if event.code.trim().is_empty() || event.patient_id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty patient_id or code".into(),
            });
        }
        events.push(event);
    }
    Ok(events)
}

#[derive(Deserialize)]
struct RawLabel {
    patient_id: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    split: String,
}

pub fn parse_label(raw: &str) -> Result<Option<bool>, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "1" | "true" | "yes" | "case" | "positive" => Ok(Some(true)),
        "0" | "false" | "no" | "control" | "negative" => Ok(Some(false)),
        other => Err(format!("unrecognised label `{other}`")),
    }
}

pub fn read_labels(reader: impl Read, path: &Path) -> Result<Vec<LabelRow>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (idx, rec) in rdr.deserialize::<RawLabel>().enumerate() {
        // header is line 1
        let line = idx + 2;
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let raw = rec.map_err(|e| malformed(e.to_string()))?;
        if raw.patient_id.is_empty() {
            return Err(malformed("empty patient_id".into()));
        }
        let label = parse_label(&raw.label).map_err(malformed)?;
        let split = if raw.split.is_empty() {
            None
        } else {
            Some(raw.split.parse::<Split>().map_err(malformed)?)
        };
        rows.push(LabelRow {
            patient_id: raw.patient_id,
            label,
            split,
        });
    }
    Ok(rows)
}

/// Paths of the three corpus files inside `dir`.
pub fn corpus_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(NOTES_FILE),
        dir.join(EVENTS_FILE),
        dir.join(LABELS_FILE),
    )
}

/// Writes the corpus as `notes.jsonl`, `events.jsonl` and `labels.csv` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let (notes, events, labels) = corpus_paths(dir);
    write_file(&notes, |w| write_notes(corpus, w))?;
    write_file(&events, |w| write_events(corpus, w))?;
    write_file(&labels, |w| write_labels(corpus, w))?;
    Ok(())
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_notes(corpus: &Corpus, w: &mut dyn Write) -> std::io::Result<()> {
    for note in corpus.patients().flat_map(|p| p.notes.iter()) {
        serde_json::to_writer(&mut *w, note)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_events(corpus: &Corpus, w: &mut dyn Write) -> std::io::Result<()> {
    for event in corpus.patients().flat_map(|p| p.events.iter()) {
        serde_json::to_writer(&mut *w, event)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels(corpus: &Corpus, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "patient_id,label,split")?;
    for p in corpus.patients() {
        let label = match p.gold_label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let split = p.split.map(|s| s.as_str()).unwrap_or("");
        writeln!(w, "{},{},{}", p.patient_id, label, split)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::model::Vocabulary;
    use chrono::NaiveDate;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    const NOTES: &str = r#"{"patient_id":"P1","note_id":"n1","note_type":"Progress Note","timestamp":"2020-01-02","text":"known CTEPH"}
{"patient_id":"P1","note_id":"n2","note_type":"Consult","timestamp":"2020-02-02","text":"follow up"}
{"patient_id":"P2","note_id":"n3","note_type":"Progress Note","timestamp":"2021-03-04","text":""}
"#;

    #[test]
    fn three_notes_two_patients() {
        let notes = read_notes(NOTES.as_bytes(), &p("notes")).unwrap();
        let labels = read_labels(
            "patient_id,label,split\nP1,1,test\nP2,0,test\n".as_bytes(),
            &p("l"),
        )
        .unwrap();
        let ing = assemble(notes, vec![], labels);
        assert_eq!(ing.corpus.len(), 2);
        assert!(ing.warnings.is_empty());
        let p1 = ing.corpus.get("P1").unwrap();
        assert_eq!(p1.notes.len(), 2);
        assert_eq!(p1.gold_label, Some(true));
        assert_eq!(p1.split, Some(Split::Test));
        assert_eq!(ing.corpus.get("P2").unwrap().notes[0].text, "");
    }

    #[test]
    fn empty_notes_file_with_one_label() {
        let notes = read_notes("".as_bytes(), &p("notes")).unwrap();
        let labels =
            read_labels("patient_id,label,split\nP9,0,train\n".as_bytes(), &p("l")).unwrap();
        let ing = assemble(notes, vec![], labels);
        assert_eq!(ing.corpus.len(), 1);
        assert!(ing.corpus.get("P9").unwrap().notes.is_empty());
        assert_eq!(ing.warnings.len(), 1);
    }

    #[test]
    fn missing_text_field_names_line() {
        let bad = "{\"patient_id\":\"P1\",\"note_id\":\"n1\",\"note_type\":\"X\",\"timestamp\":\"2020-01-01\",\"text\":\"a\"}\n\
                   {\"patient_id\":\"P1\",\"note_id\":\"n2\",\"note_type\":\"X\",\"timestamp\":\"2020-01-01\"}\n";
        let err = read_notes(bad.as_bytes(), &p("notes.jsonl")).unwrap_err();
        match &err {
            CorpusError::Malformed { line, message, .. } => {
                assert_eq!(*line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn duplicate_note_id_rejected() {
        let dup = "{\"patient_id\":\"P1\",\"note_id\":\"n1\",\"note_type\":\"X\",\"timestamp\":\"2020-01-01\",\"text\":\"a\"}\n\
                   {\"patient_id\":\"P2\",\"note_id\":\"n1\",\"note_type\":\"X\",\"timestamp\":\"2020-01-01\",\"text\":\"b\"}\n";
        assert!(matches!(
            read_notes(dup.as_bytes(), &p("n")),
            Err(CorpusError::DuplicateNote { line: 2, .. })
        ));
    }

    #[test]
    fn events_parse_vocabulary_aliases() {
        let ev = "{\"patient_id\":\"P1\",\"vocabulary\":\"ICD-10\",\"code\":\" i27.21 \",\"date\":\"2020-01-01\"}\n";
        let events = read_events(ev.as_bytes(), &p("e")).unwrap();
        assert_eq!(events[0].vocabulary, Vocabulary::Icd10);
        assert_eq!(events[0].normalized_code(), "I27.21");
        assert_eq!(events[0].date, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
    }

    #[test]
    fn bad_label_value_is_malformed() {
        let err = read_labels(
            "patient_id,label,split\nP1,maybe,test\n".as_bytes(),
            &p("l"),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
        let err =
            read_labels("patient_id,label,split\nP1,1,holdout\n".as_bytes(), &p("l")).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn write_then_ingest_round_trips() {
        let notes = read_notes(NOTES.as_bytes(), &p("notes")).unwrap();
        let labels = read_labels(
            "patient_id,label,split\nP1,1,test\nP2,,\n".as_bytes(),
            &p("l"),
        )
        .unwrap();
        let corpus = assemble(notes, vec![], labels).corpus;
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let (n, e, l) = corpus_paths(dir.path());
        let back = ingest_corpus(&n, &e, &l).unwrap();
        assert_eq!(back.corpus, corpus);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_corpus(
            &p("/nonexistent/n"),
            &p("/nonexistent/e"),
            &p("/nonexistent/l"),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }
}
