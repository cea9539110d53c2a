//! Seeded synthetic cohort generator.
//!
//! Cases carry affirmative disease mentions in ordinary notes and, for a
//! configurable fraction, PH phenotype codes. Controls carry either nothing,
//! hedged ("possible", "rule out") mentions, or imaging reports whose
//! impressions suggest the disease without confirming it. Filler text mixes
//! in near-miss vocabulary ("pathology", "physical", "pH 7.38") so retrieval
//! boundaries get exercised.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ClinicalNote, Corpus, PatientRecord, Split, StructuredEvent, Vocabulary};
use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub case_fraction: f64,
    pub seed: u64,
    pub split: Split,
    /// Fraction of cases whose only evidence is an ECHO/CT report.
    pub imaging_only_case_fraction: f64,
    /// Fraction of controls carrying an ECHO/CT report that suggests PH.
    pub control_suspicion_fraction: f64,
    /// Fraction of controls with a hedged mention ("possible", "rule out") in an ordinary note.
    pub control_possible_fraction: f64,
    /// Fraction of cases carrying at least one PH diagnosis or medication code.
    pub case_code_fraction: f64,
    /// Fraction of controls carrying a PH code anyway (miscoding, off-label sildenafil).
    pub control_code_fraction: f64,
    pub mean_notes_per_patient: f64,
    pub mean_note_tokens: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 50,
            case_fraction: 0.38,
            seed: 7,
            split: Split::Test,
            imaging_only_case_fraction: 0.05,
            control_suspicion_fraction: 0.3,
            control_possible_fraction: 0.2,
            case_code_fraction: 0.5,
            control_code_fraction: 0.08,
            mean_notes_per_patient: 6.0,
            mean_note_tokens: 120.0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fractions = [
            ("case_fraction", self.case_fraction),
            (
                "imaging_only_case_fraction",
                self.imaging_only_case_fraction,
            ),
            (
                "control_suspicion_fraction",
                self.control_suspicion_fraction,
            ),
            ("control_possible_fraction", self.control_possible_fraction),
            ("case_code_fraction", self.case_code_fraction),
            ("control_code_fraction", self.control_code_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::InvalidSpec(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        if self.mean_notes_per_patient.is_nan() || self.mean_notes_per_patient < 1.0 {
            return Err(CorpusError::InvalidSpec(
                "mean_notes_per_patient must be >= 1".into(),
            ));
        }
        if self.mean_note_tokens.is_nan() || self.mean_note_tokens < 1.0 {
            return Err(CorpusError::InvalidSpec(
                "mean_note_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_cases(&self) -> usize {
        (self.n_patients as f64 * self.case_fraction).round() as usize
    }
}

/// Affirmative statements planted in case notes.
pub const AFFIRMATIVE_SENTENCES: &[&str] = &[
    "Assessment: pulmonary arterial hypertension, confirmed by right heart catheterization.",
    "Known CTEPH, status post pulmonary thromboendarterectomy.",
    "History of pulmonary hypertension, followed in the pulmonary hypertension clinic.",
    "Diagnosis: PH-COPD, on home oxygen.",
    "pHTN group 3 due to interstitial lung disease, stable on current regimen.",
    "Continues sildenafil for pulmonary arterial hypertension.",
    "RHC confirmed pulmonary hypertension with mean PA pressure of 38 mmHg.",
];

/// Hedged statements planted in control (and occasionally case) notes.
pub const HEDGED_SENTENCES: &[&str] = &[
    "Dyspnea on exertion; possible pulmonary hypertension, echocardiogram ordered.",
    "Rule out pulmonary hypertension given chronic hypoxemia.",
    "Suspected PH, referred for further workup.",
];

const FILLER_SENTENCES: &[&str] = &[
    "Patient seen in clinic for routine follow up.",
    "Vital signs reviewed and stable.",
    "Physical exam notable for mild bilateral lower extremity edema.",
    "Pathology report from prior biopsy was unremarkable.",
    "Phone call with patient to review medication list.",
    "Pharmacy confirmed refill of lisinopril for essential hypertension.",
    "Arterial blood gas: pH 7.38, pCO2 41, pO2 82.",
    "Pulmonary function tests show a mild obstructive pattern.",
    "Alpha-1 antitrypsin level within normal limits.",
    "Serum phosphate slightly low, will replete.",
    "Echocardiogram from last year reviewed with the patient.",
    "Blood pressure elevated today at 148/90, recheck at next visit.",
    "Denies chest pain, palpitations, or syncope.",
    "Continue metformin for type 2 diabetes.",
    "Home oxygen at 2 liters via nasal cannula at night.",
    "Graphs of home glucose readings reviewed.",
    "Patient reports improved sleep with CPAP.",
    "Labs: hemoglobin 12.1, creatinine 1.0, BNP 95.",
    "Follow up in three months or sooner as needed.",
    "Discussed smoking cessation at length.",
    "Right knee pain managed with physical therapy.",
    "High dose statin continued.",
    "Pleural effusion resolved on follow up imaging.",
    "Medication reconciliation completed with patient and family.",
];

/// Ordinary note types with rough relative frequencies.
const PLAIN_NOTE_TYPES: &[(&str, u32)] = &[
    ("Progress Note", 54),
    ("Consult", 8),
    ("Discharge Summary", 6),
    ("History & Physical Exam", 6),
    ("Telephone Encounter", 4),
    ("Nursing Note", 3),
    ("Pharmacy Note", 2),
    ("Patient Instructions", 2),
    ("Physical Therapy Note", 2),
    ("Social Work Note", 1),
];

pub const ECHO_NOTE_TYPE: &str = "Procedure";
pub const CT_NOTE_TYPE: &str = "Imaging";

pub const PH_DIAGNOSIS_CODES: &[(Vocabulary, &str)] = &[
    (Vocabulary::Icd9, "416.0"),
    (Vocabulary::Icd9, "416.8"),
    (Vocabulary::Icd9, "416.9"),
    (Vocabulary::Icd10, "I27.21"),
    (Vocabulary::Icd10, "I27.22"),
    (Vocabulary::Icd10, "I27.23"),
    (Vocabulary::Icd10, "I27.24"),
    (Vocabulary::Icd10, "I27.29"),
    (Vocabulary::Icd10, "I27.9"),
];

pub const PH_MEDICATION_CODES: &[&str] =
    &["1439816", "8814", "40138", "1442132", "136411", "358263"];

const BACKGROUND_CODES: &[(Vocabulary, &str)] = &[
    (Vocabulary::Icd10, "I10"),
    (Vocabulary::Icd10, "E11.9"),
    (Vocabulary::Icd10, "J44.9"),
    (Vocabulary::Icd10, "N18.3"),
    (Vocabulary::Icd10, "E78.5"),
    (Vocabulary::Icd10, "I48.91"),
    (Vocabulary::Icd10, "K21.9"),
    (Vocabulary::Icd9, "401.9"),
    (Vocabulary::Icd9, "250.00"),
    (Vocabulary::Icd9, "496"),
    (Vocabulary::RxNorm, "6809"),
    (Vocabulary::RxNorm, "29046"),
    (Vocabulary::RxNorm, "83367"),
    (Vocabulary::RxNorm, "17767"),
];

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date")
}

fn echo_report(rng: &mut ChaCha8Rng) -> String {
    let indication = ["dyspnea", "lower extremity edema", "murmur", "syncope"]
        .choose(rng)
        .unwrap();
    let ef = rng.gen_range(50..=65);
    let degree = ["mildly", "moderately"].choose(rng).unwrap();
    let rvsp = rng.gen_range(40..=70);
    format!(
        "TRANSTHORACIC ECHOCARDIOGRAM REPORT\nIndication: {indication}.\n\
         FINDINGS: Left ventricular ejection fraction is {ef}%. The right ventricle is {degree} dilated. \
         Estimated RVSP is {rvsp} mmHg.\n\
         IMPRESSION: Elevated RVSP, findings suggestive of pulmonary hypertension. \
         Clinical correlation recommended."
    )
}

fn ct_report(rng: &mut ChaCha8Rng) -> String {
    let diameter = rng.gen_range(30..=38) as f64 / 10.0;
    format!(
        "CT CHEST WITH CONTRAST\nTECHNIQUE: Axial images of the chest were obtained following IV CONTRAST.\n\
         FINDINGS: The main pulmonary artery measures {diameter:.1} cm. No pulmonary embolism.\n\
         IMPRESSION: Dilated pulmonary artery, which can be seen with pulmonary hypertension."
    )
}

fn pick_weighted<'a>(rng: &mut ChaCha8Rng, table: &'a [(&'a str, u32)]) -> &'a str {
    let total: u32 = table.iter().map(|(_, w)| w).sum();
    let mut roll = rng.gen_range(0..total);
    for (name, w) in table {
        if roll < *w {
            return name;
        }
        roll -= w;
    }
    table[0].0
}

fn filler_text(rng: &mut ChaCha8Rng, target_tokens: usize) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut tokens = 0;
    while tokens < target_tokens {
        let s = FILLER_SENTENCES.choose(rng).unwrap();
        tokens += s.split_whitespace().count();
        sentences.push(s.to_string());
    }
    sentences
}

fn insert_sentence(rng: &mut ChaCha8Rng, sentences: &mut Vec<String>, sentence: &str) {
    let at = rng.gen_range(0..=sentences.len());
    sentences.insert(at, sentence.to_string());
}

struct PatientPlan {
    is_case: bool,
    imaging_only: bool,
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_patients;
    let n_cases = spec.n_cases().min(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_case = vec![false; n];
    for &i in &order[..n_cases] {
        is_case[i] = true;
    }

    let mut corpus = Corpus::new();
    for (i, &case) in is_case.iter().enumerate() {
        let plan = PatientPlan {
            is_case: case,
            imaging_only: case && rng.gen_bool(spec.imaging_only_case_fraction),
        };
        corpus.insert(generate_patient(&mut rng, spec, i, &plan));
    }
    Ok(corpus)
}

fn generate_patient(
    rng: &mut ChaCha8Rng,
    spec: &CohortSpec,
    index: usize,
    plan: &PatientPlan,
) -> PatientRecord {
    let patient_id = format!("P{:05}", index + 1);
    let max_notes = ((2.0 * spec.mean_notes_per_patient).round() as usize)
        .saturating_sub(1)
        .max(1);
    let n_plain = rng.gen_range(1..=max_notes);
    let mean_tokens = spec.mean_note_tokens;
    let lo = ((mean_tokens * 0.5).round() as usize).max(1);
    let hi = ((mean_tokens * 1.5).round() as usize).max(lo);

    // (note type, sentences) for ordinary notes; imaging reports appended below.
    let mut plain: Vec<(String, Vec<String>)> = (0..n_plain)
        .map(|_| {
            let note_type = pick_weighted(rng, PLAIN_NOTE_TYPES).to_string();
            let target = rng.gen_range(lo..=hi);
            (note_type, filler_text(rng, target))
        })
        .collect();
    let mut imaging: Vec<(String, String)> = Vec::new();

    let mut events = Vec::new();
    if plan.is_case {
        if plan.imaging_only {
            push_imaging(rng, &mut imaging);
        } else {
            let mentions = rng.gen_range(1..=3);
            for _ in 0..mentions {
                let sentence = AFFIRMATIVE_SENTENCES.choose(rng).unwrap();
                let target = rng.gen_range(0..plain.len());
                insert_sentence(rng, &mut plain[target].1, sentence);
            }
            if rng.gen_bool(0.5) {
                push_imaging(rng, &mut imaging);
            }
        }
        if rng.gen_bool(spec.case_code_fraction) {
            let n_codes = rng.gen_range(1..=3);
            for _ in 0..n_codes {
                events.push(ph_code(rng, &patient_id));
            }
        }
    } else {
        if rng.gen_bool(spec.control_suspicion_fraction) {
            push_imaging(rng, &mut imaging);
        }
        if rng.gen_bool(spec.control_possible_fraction) {
            let sentence = HEDGED_SENTENCES.choose(rng).unwrap();
            let target = rng.gen_range(0..plain.len());
            insert_sentence(rng, &mut plain[target].1, sentence);
        }
        if rng.gen_bool(spec.control_code_fraction) {
            events.push(ph_code(rng, &patient_id));
        }
    }
    let n_background = rng.gen_range(1..=5);
    for _ in 0..n_background {
        let (vocabulary, code) = *BACKGROUND_CODES.choose(rng).unwrap();
        events.push(StructuredEvent {
            patient_id: patient_id.clone(),
            vocabulary,
            code: code.to_string(),
            date: random_date(rng),
        });
    }
    events.sort_by(|a, b| (a.date, a.vocabulary, &a.code).cmp(&(b.date, b.vocabulary, &b.code)));

    let mut drafts: Vec<(NaiveDate, String, String)> =
        Vec::with_capacity(plain.len() + imaging.len());
    for (t, s) in plain {
        drafts.push((random_date(rng), t, s.join(" ")));
    }
    for (t, text) in imaging {
        drafts.push((random_date(rng), t, text));
    }
    drafts.sort_by_key(|a| a.0);

    let notes = drafts
        .into_iter()
        .enumerate()
        .map(|(k, (timestamp, note_type, text))| ClinicalNote {
            patient_id: patient_id.clone(),
            note_id: format!("{patient_id}-N{:03}", k + 1),
            note_type,
            timestamp,
            text,
        })
        .collect();

    PatientRecord {
        patient_id,
        notes,
        events,
        gold_label: Some(plan.is_case),
        split: Some(spec.split),
    }
}

fn push_imaging(rng: &mut ChaCha8Rng, imaging: &mut Vec<(String, String)>) {
    if rng.gen_bool(0.5) {
        imaging.push((ECHO_NOTE_TYPE.to_string(), echo_report(rng)));
    } else {
        imaging.push((CT_NOTE_TYPE.to_string(), ct_report(rng)));
    }
}

fn random_date(rng: &mut ChaCha8Rng) -> NaiveDate {
    base_date() + Duration::days(rng.gen_range(0..365 * 14))
}

fn ph_code(rng: &mut ChaCha8Rng, patient_id: &str) -> StructuredEvent {
    let use_med = rng.gen_bool(0.35);
    let (vocabulary, code) = if use_med {
        (
            Vocabulary::RxNorm,
            *PH_MEDICATION_CODES.choose(rng).unwrap(),
        )
    } else {
        *PH_DIAGNOSIS_CODES.choose(rng).unwrap()
    };
    StructuredEvent {
        patient_id: patient_id.to_string(),
        vocabulary,
        code: code.to_string(),
        date: random_date(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, frac: f64, seed: u64) -> CohortSpec {
        CohortSpec {
            n_patients: n,
            case_fraction: frac,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fifty_patients_split_19_31() {
        let c = generate_cohort(&spec(50, 0.38, 7)).unwrap();
        let labels = c.gold_labels();
        assert_eq!(labels.len(), 50);
        assert_eq!(labels.values().filter(|&&l| l).count(), 19);
        assert_eq!(labels.values().filter(|&&l| !l).count(), 31);
    }

    #[test]
    fn test_split_proportions() {
        let c = generate_cohort(&spec(199, 0.38, 11)).unwrap();
        assert_eq!(c.gold_labels().values().filter(|&&l| l).count(), 76);
    }

    #[test]
    fn zero_case_fraction_has_no_affirmative_text() {
        let c = generate_cohort(&spec(10, 0.0, 1)).unwrap();
        assert_eq!(c.len(), 10);
        for p in c.patients() {
            assert_eq!(p.gold_label, Some(false));
            for n in &p.notes {
                for s in AFFIRMATIVE_SENTENCES {
                    assert!(!n.text.contains(s));
                }
            }
        }
    }

    #[test]
    fn same_spec_same_corpus() {
        let s = spec(40, 0.4, 99);
        assert_eq!(generate_cohort(&s).unwrap(), generate_cohort(&s).unwrap());
        let other = spec(40, 0.4, 100);
        assert_ne!(
            generate_cohort(&s).unwrap(),
            generate_cohort(&other).unwrap()
        );
    }

    #[test]
    fn empty_cohort() {
        assert!(generate_cohort(&spec(0, 0.5, 3)).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_range_fraction() {
        assert!(generate_cohort(&spec(5, 1.5, 3)).is_err());
        let mut s = spec(5, 0.5, 3);
        s.control_suspicion_fraction = -0.1;
        assert!(generate_cohort(&s).is_err());
    }

    #[test]
    fn all_cases() {
        let c = generate_cohort(&spec(12, 1.0, 5)).unwrap();
        assert!(c.gold_labels().values().all(|&l| l));
    }

    #[test]
    fn note_ids_unique_and_owned() {
        let c = generate_cohort(&spec(30, 0.5, 2)).unwrap();
        let mut ids = std::collections::HashSet::new();
        for p in c.patients() {
            for n in &p.notes {
                assert_eq!(n.patient_id, p.patient_id);
                assert!(ids.insert(n.note_id.clone()));
            }
            for e in &p.events {
                assert_eq!(e.patient_id, p.patient_id);
            }
        }
    }
}
