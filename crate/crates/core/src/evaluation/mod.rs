//! Confusion counts, precision/recall/F1, note-type distributions and
//! comparison reports.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use report::{compare_report, render_grid, render_table, EvalReport, GoldLabel, ReportRow};

use crate::corpus::Split;
use crate::retrieval::Snippet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no decision for {} gold patient(s): {}", .0.len(), .0.join(", "))]
    MissingDecisions(Vec<String>),
    #[error("run `{run}` has no decisions on the {expected} split (found: {found})")]
    SplitMismatch {
        run: String,
        expected: Split,
        found: String,
    },
    #[error("no labelled patients in the {0} split")]
    EmptySplit(Split),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores decisions over the gold patients. Decisions for patients outside
/// `gold` are ignored; a gold patient without a decision is an error.
pub fn score(
    decisions: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<ConfusionMatrix, EvalError> {
    let missing: Vec<String> = gold
        .keys()
        .filter(|p| !decisions.contains_key(*p))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingDecisions(missing));
    }
    let mut cm = ConfusionMatrix::default();
    for (patient, &actual) in gold {
        cm.add(decisions[patient], actual);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteTypeShare {
    pub note_type: String,
    pub count: usize,
    pub fraction: f64,
}

pub const OTHER_NOTE_TYPE: &str = "Other";
pub const DEFAULT_TOP_NOTE_TYPES: usize = 6;

/// Share of retrieved snippets per note type: the `top_k` most frequent
/// types by name, everything else (including a literal "Other") bucketed
/// as "Other" at the end.
pub fn distribution_from_counts(
    counts: &BTreeMap<String, usize>,
    top_k: usize,
) -> Vec<NoteTypeShare> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut named: Vec<(&String, usize)> = counts
        .iter()
        .filter(|(t, &c)| c > 0 && t.as_str() != OTHER_NOTE_TYPE)
        .map(|(t, &c)| (t, c))
        .collect();
    named.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut out: Vec<NoteTypeShare> = named
        .iter()
        .take(top_k)
        .map(|(t, c)| NoteTypeShare {
            note_type: (*t).clone(),
            count: *c,
            fraction: *c as f64 / total as f64,
        })
        .collect();
    let shown: usize = out.iter().map(|s| s.count).sum();
    let other = total - shown;
    if other > 0 {
        out.push(NoteTypeShare {
            note_type: OTHER_NOTE_TYPE.into(),
            count: other,
            fraction: other as f64 / total as f64,
        });
    }
    out
}

pub fn note_type_distribution(retrieved: &[Snippet], top_k: usize) -> Vec<NoteTypeShare> {
    let mut counts = BTreeMap::new();
    for s in retrieved {
        *counts.entry(s.note_type.clone()).or_insert(0) += 1;
    }
    distribution_from_counts(&counts, top_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, bool)]) -> BTreeMap<String, bool> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn labels(n: usize, pos: usize) -> BTreeMap<String, bool> {
        (0..n).map(|i| (format!("P{i:02}"), i < pos)).collect()
    }

    #[test]
    fn perfect_classifier() {
        let gold = labels(10, 4);
        let cm = score(&gold, &gold).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (4, 6, 0, 0));
        assert_eq!(cm.f1(), 1.0);
    }

    #[test]
    fn all_negative() {
        let gold = labels(10, 4);
        let none: BTreeMap<_, _> = gold.keys().map(|k| (k.clone(), false)).collect();
        let cm = score(&none, &gold).unwrap();
        assert_eq!((cm.fn_, cm.tn), (4, 6));
        assert_eq!(cm.f1(), 0.0);
    }

    #[test]
    fn f1_from_counts() {
        let cm = ConfusionMatrix {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 0,
        };
        assert_eq!(cm.precision(), 0.75);
        assert_eq!(cm.recall(), 0.6);
        // 2 * 0.75 * 0.6 / 1.35 = 2/3
        assert!((cm.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_decision_lists_patients() {
        let gold = map(&[("A", true), ("B", false), ("C", true)]);
        let dec = map(&[("A", true)]);
        assert_eq!(
            score(&dec, &gold),
            Err(EvalError::MissingDecisions(vec!["B".into(), "C".into()]))
        );
    }

    #[test]
    fn distribution_examples() {
        let mut counts = BTreeMap::new();
        counts.insert("Progress Note".to_string(), 54);
        counts.insert("Consult".to_string(), 20);
        counts.insert("Nursing Note".to_string(), 26);
        let d = distribution_from_counts(&counts, 6);
        assert_eq!(d[0].note_type, "Progress Note");
        assert!((d[0].fraction - 0.54).abs() < 1e-12);

        let one: BTreeMap<_, _> = [("Consult".to_string(), 1)].into_iter().collect();
        let d = distribution_from_counts(&one, 6);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].fraction, 1.0);

        assert!(distribution_from_counts(&BTreeMap::new(), 6).is_empty());
    }

    #[test]
    fn distribution_buckets_tail_as_other() {
        let counts: BTreeMap<String, usize> = (0..10).map(|i| (format!("T{i}"), 10 - i)).collect();
        let mut with_other = counts.clone();
        with_other.insert("Other".into(), 3);
        let d = distribution_from_counts(&with_other, 3);
        assert_eq!(d.len(), 4);
        assert_eq!(d[3].note_type, "Other");
        assert_eq!(d[3].count, 7 + 6 + 5 + 4 + 3 + 2 + 1 + 3);
        let sum: f64 = d.iter().map(|s| s.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
