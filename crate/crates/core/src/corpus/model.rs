use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Note types that are reported by name; anything else is accepted verbatim
/// and only folded into "Other" when a distribution is rendered.
pub const KNOWN_NOTE_TYPES: &[&str] = &[
    "Progress Note",
    "Consult",
    "Discharge Summary",
    "History & Physical Exam",
    "Procedure",
    "Telephone Encounter",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub patient_id: String,
    pub note_id: String,
    pub note_type: String,
    pub timestamp: NaiveDate,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vocabulary {
    #[serde(rename = "ICD9", alias = "ICD-9", alias = "icd9")]
    Icd9,
    #[serde(rename = "ICD10", alias = "ICD-10", alias = "icd10")]
    Icd10,
    #[serde(rename = "RxNorm", alias = "RXNORM", alias = "rxnorm")]
    RxNorm,
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Icd9 => "ICD9",
            Self::Icd10 => "ICD10",
            Self::RxNorm => "RxNorm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredEvent {
    pub patient_id: String,
    pub vocabulary: Vocabulary,
    pub code: String,
    pub date: NaiveDate,
}

impl StructuredEvent {
    /// Code in comparison form: trimmed and upper-cased.
    pub fn normalized_code(&self) -> String {
        normalize_code(&self.code)
    }
}

pub fn normalize_code(code: &str) -> String {
    code.trim().to_ascii_uppercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "validation" | "val" | "valid" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(format!(
                "unknown split `{other}` (expected train, validation or test)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub notes: Vec<ClinicalNote>,
    pub events: Vec<StructuredEvent>,
    pub gold_label: Option<bool>,
    pub split: Option<Split>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            ..Default::default()
        }
    }
}

/// Patients keyed by id. Iteration order is the id order, which keeps every
/// downstream artifact deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    patients: BTreeMap<String, PatientRecord>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patients.get(patient_id)
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.values()
    }

    pub fn entry(&mut self, patient_id: &str) -> &mut PatientRecord {
        self.patients
            .entry(patient_id.to_string())
            .or_insert_with(|| PatientRecord::new(patient_id))
    }

    pub fn insert(&mut self, record: PatientRecord) -> Option<PatientRecord> {
        self.patients.insert(record.patient_id.clone(), record)
    }

    /// Patients assigned to `split`, in id order.
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &PatientRecord> {
        self.patients
            .values()
            .filter(move |p| p.split == Some(split))
    }

    /// Gold labels of every labelled patient.
    pub fn gold_labels(&self) -> BTreeMap<String, bool> {
        self.patients
            .values()
            .filter_map(|p| p.gold_label.map(|l| (p.patient_id.clone(), l)))
            .collect()
    }
}

impl FromIterator<PatientRecord> for Corpus {
    fn from_iter<T: IntoIterator<Item = PatientRecord>>(iter: T) -> Self {
        let mut corpus = Corpus::new();
        for record in iter {
            corpus.insert(record);
        }
        corpus
    }
}
