use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    distribution_from_counts, score, ConfusionMatrix, EvalError, NoteTypeShare,
    DEFAULT_TOP_NOTE_TYPES,
};
use crate::corpus::Split;
use crate::decisions::{ExclusionMode, ModelKind, RunDecisions};
use crate::mapreduce::AggregationMethod;
use crate::prompting::Design;

/// Gold label plus the split it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldLabel {
    pub label: bool,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub model: ModelKind,
    pub prompt: Option<Design>,
    pub aggregation: Option<AggregationMethod>,
    pub exclusion: Option<ExclusionMode>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    pub retrieved_snippets: usize,
    pub note_types: Vec<NoteTypeShare>,
    pub unparseable: usize,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub patients: usize,
    pub positives: usize,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn row(&self, run: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.run == run)
    }
}

/// Scores every run on the patients of `split`. A run with no records on
/// that split, or whose records claim a different split than the labels,
/// is an error rather than a silent zero.
pub fn compare_report(
    runs: &[RunDecisions],
    labels: &BTreeMap<String, GoldLabel>,
    split: Split,
) -> Result<EvalReport, EvalError> {
    let gold: BTreeMap<String, bool> = labels
        .iter()
        .filter(|(_, g)| g.split == Some(split))
        .map(|(p, g)| (p.clone(), g.label))
        .collect();
    if gold.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let in_split: Vec<_> = run
            .records
            .iter()
            .filter(|r| r.split == Some(split))
            .collect();
        let conflicting = run.records.iter().any(|r| {
            r.split.is_some()
                && labels
                    .get(&r.patient_id)
                    .and_then(|g| g.split)
                    .is_some_and(|s| Some(s) != r.split)
        });
        if in_split.is_empty() || conflicting {
            let found: BTreeSet<&str> = run
                .records
                .iter()
                .map(|r| r.split.map_or("unassigned", |s| s.as_str()))
                .collect();
            return Err(EvalError::SplitMismatch {
                run: run.info.run.clone(),
                expected: split,
                found: found.into_iter().collect::<Vec<_>>().join(", "),
            });
        }
        let decisions: BTreeMap<String, bool> = in_split
            .iter()
            .map(|r| (r.patient_id.clone(), r.decision))
            .collect();
        let cm = score(&decisions, &gold)?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in in_split.iter().filter(|r| gold.contains_key(&r.patient_id)) {
            for (t, c) in &r.note_types {
                *counts.entry(t.clone()).or_insert(0) += c;
            }
        }
        rows.push(ReportRow {
            run: run.info.run.clone(),
            model: run.info.model,
            prompt: run.info.prompt,
            aggregation: run.info.aggregation,
            exclusion: run.info.exclusion,
            precision: cm.precision(),
            recall: cm.recall(),
            f1: cm.f1(),
            confusion: cm,
            retrieved_snippets: counts.values().sum(),
            note_types: distribution_from_counts(&counts, DEFAULT_TOP_NOTE_TYPES),
            unparseable: in_split.iter().map(|r| r.unparseable).sum(),
            degraded: in_split.iter().filter(|r| r.degraded).count(),
        });
    }
    rows.sort_by(|a, b| a.run.cmp(&b.run));
    Ok(EvalReport {
        split,
        patients: gold.len(),
        positives: gold.values().filter(|&&l| l).count(),
        rows,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn aligned(header: &[&str], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &mut dyn Iterator<Item = &str>, out: &mut String| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut rule.iter().map(String::as_str), &mut out);
    for row in body {
        line(&mut row.iter().map(String::as_str), &mut out);
    }
    out
}

/// One line per run with precision, recall, F1 and the confusion counts.
pub fn render_table(report: &EvalReport) -> String {
    let header = [
        "run",
        "model",
        "prompt",
        "aggregation",
        "exclusion",
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "fn",
        "tn",
    ];
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.run.clone(),
                r.model.as_str().to_string(),
                opt(r.prompt),
                opt(r.aggregation),
                opt(r.exclusion),
                format!("{:.3}", r.precision),
                format!("{:.3}", r.recall),
                format!("{:.3}", r.f1),
                r.confusion.tp.to_string(),
                r.confusion.fp.to_string(),
                r.confusion.fn_.to_string(),
                r.confusion.tn.to_string(),
            ]
        })
        .collect();
    let mut out = format!(
        "split: {}  patients: {}  positives: {}\n",
        report.split, report.patients, report.positives
    );
    out.push_str(&aligned(&header, &body));
    out
}

/// F1 grid: prompt designs down, aggregation x exclusion across, with a
/// column-mean row. `None` when no LLM rows are present.
pub fn render_grid(report: &EvalReport) -> Option<String> {
    let mut cells: BTreeMap<(Design, AggregationMethod, ExclusionMode), f64> = BTreeMap::new();
    for r in &report.rows {
        if let (Some(p), Some(a), Some(e)) = (r.prompt, r.aggregation, r.exclusion) {
            cells.insert((p, a, e), r.f1);
        }
    }
    if cells.is_empty() {
        return None;
    }
    let prompts: BTreeSet<Design> = cells.keys().map(|k| k.0).collect();
    let columns: Vec<(AggregationMethod, ExclusionMode)> = AggregationMethod::ALL
        .iter()
        .flat_map(|&a| ExclusionMode::ALL.iter().map(move |&e| (a, e)))
        .filter(|&(a, e)| cells.keys().any(|k| k.1 == a && k.2 == e))
        .collect();
    let header_cells: Vec<String> = std::iter::once("prompt".to_string())
        .chain(columns.iter().map(|(a, e)| format!("{a}/{e}")))
        .collect();
    let header: Vec<&str> = header_cells.iter().map(String::as_str).collect();
    let mut body: Vec<Vec<String>> = prompts
        .iter()
        .map(|&p| {
            std::iter::once(p.to_string())
                .chain(columns.iter().map(|&(a, e)| {
                    cells
                        .get(&(p, a, e))
                        .map_or_else(|| "--".into(), |f| format!("{f:.2}"))
                }))
                .collect()
        })
        .collect();
    let mut avg = vec!["average".to_string()];
    for &(a, e) in &columns {
        let vals: Vec<f64> = prompts
            .iter()
            .filter_map(|&p| cells.get(&(p, a, e)).copied())
            .collect();
        avg.push(format!(
            "{:.2}",
            vals.iter().sum::<f64>() / vals.len() as f64
        ));
    }
    body.push(avg);
    Some(aligned(&header, &body))
}
