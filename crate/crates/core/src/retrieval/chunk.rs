use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::corpus::ClinicalNote;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Tokenizer {
    /// Maximal runs of non-whitespace.
    #[default]
    Whitespace,
    /// Fixed-width character windows approximating model tokens.
    CharBudget { chars_per_token: f64 },
}

impl Tokenizer {
    /// Byte spans of the tokens of `text`, in order.
    pub fn spans(&self, text: &str) -> Vec<Range<usize>> {
        match *self {
            Tokenizer::Whitespace => {
                let mut spans = Vec::new();
                let mut start = None;
                for (i, c) in text.char_indices() {
                    match (c.is_whitespace(), start) {
                        (true, Some(s)) => {
                            spans.push(s..i);
                            start = None;
                        }
                        (false, None) => start = Some(i),
                        _ => {}
                    }
                }
                if let Some(s) = start {
                    spans.push(s..text.len());
                }
                spans
            }
            Tokenizer::CharBudget { chars_per_token } => {
                let mut bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
                let n_chars = bounds.len();
                bounds.push(text.len());
                let mut spans = Vec::new();
                let mut k = 0usize;
                let mut start = 0usize;
                while start < n_chars {
                    let end = ((((k + 1) as f64) * chars_per_token).floor() as usize).min(n_chars);
                    spans.push(bounds[start]..bounds[end]);
                    start = end;
                    k += 1;
                }
                spans
            }
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match *self {
            Tokenizer::Whitespace => text.split_whitespace().count(),
            Tokenizer::CharBudget { chars_per_token } => {
                let n = text.chars().count();
                (n as f64 / chars_per_token).ceil() as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkerConfig {
    pub snippet_size: usize,
    pub overlap: usize,
    pub tokenizer: Tokenizer,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            snippet_size: 2048,
            overlap: 0,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.snippet_size == 0 {
            return Err(RetrievalError::Config("snippet_size must be > 0".into()));
        }
        if self.overlap >= self.snippet_size {
            return Err(RetrievalError::Config(format!(
                "overlap ({}) must be smaller than snippet_size ({})",
                self.overlap, self.snippet_size
            )));
        }
        if let Tokenizer::CharBudget { chars_per_token } = self.tokenizer {
            if !(chars_per_token.is_finite() && chars_per_token >= 1.0) {
                return Err(RetrievalError::Config(
                    "chars_per_token must be a finite number >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub snippet_id: String,
    pub patient_id: String,
    pub note_id: String,
    pub note_type: String,
    pub start_token: usize,
    pub end_token: usize,
    pub text: String,
}

pub fn snippet_id(note_id: &str, index: usize) -> String {
    format!("{note_id}#{index:05}")
}

/// Splits one note into token-bounded snippets. Snippets never span notes.
///
/// Under the whitespace tokenizer snippet text is the token run joined by
/// single spaces; under the char-budget tokenizer it is the exact source slice.
pub fn chunk_note(
    note: &ClinicalNote,
    cfg: &ChunkerConfig,
) -> Result<Vec<Snippet>, RetrievalError> {
    cfg.validate()?;
    let spans = cfg.tokenizer.spans(&note.text);
    let step = cfg.snippet_size - cfg.overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start < spans.len() {
        let end = (start + cfg.snippet_size).min(spans.len());
        let text = match cfg.tokenizer {
            Tokenizer::Whitespace => spans[start..end]
                .iter()
                .map(|r| &note.text[r.clone()])
                .collect::<Vec<_>>()
                .join(" "),
            Tokenizer::CharBudget { .. } => {
                note.text[spans[start].start..spans[end - 1].end].to_string()
            }
        };
        out.push(Snippet {
            snippet_id: snippet_id(&note.note_id, out.len()),
            patient_id: note.patient_id.clone(),
            note_id: note.note_id.clone(),
            note_type: note.note_type.clone(),
            start_token: start,
            end_token: end,
            text,
        });
        if end == spans.len() {
            break;
        }
        start += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn note(text: String) -> ClinicalNote {
        ClinicalNote {
            patient_id: "P1".into(),
            note_id: "n1".into(),
            note_type: "Progress Note".into(),
            timestamp: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            text,
        }
    }

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn five_thousand_tokens_make_three_snippets() {
        let s = chunk_note(&note(words(5000)), &ChunkerConfig::default()).unwrap();
        let sizes: Vec<_> = s.iter().map(|s| s.end_token - s.start_token).collect();
        assert_eq!(sizes, vec![2048, 2048, 904]);
        assert_eq!(s[2].snippet_id, "n1#00002");
    }

    #[test]
    fn exact_budget_is_one_snippet() {
        let s = chunk_note(&note(words(2048)), &ChunkerConfig::default()).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn empty_and_blank_notes_have_no_snippets() {
        assert!(chunk_note(&note(String::new()), &ChunkerConfig::default())
            .unwrap()
            .is_empty());
        assert!(
            chunk_note(&note(" \n\t ".into()), &ChunkerConfig::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn overlap_steps_back() {
        let cfg = ChunkerConfig {
            snippet_size: 4,
            overlap: 1,
            ..Default::default()
        };
        let s = chunk_note(&note(words(10)), &cfg).unwrap();
        let ranges: Vec<_> = s.iter().map(|s| (s.start_token, s.end_token)).collect();
        assert_eq!(ranges, vec![(0, 4), (3, 7), (6, 10)]);
        assert_eq!(s[1].text, "w3 w4 w5 w6");
    }

    #[test]
    fn char_budget_reconstructs_source() {
        let cfg = ChunkerConfig {
            snippet_size: 3,
            overlap: 0,
            tokenizer: Tokenizer::CharBudget {
                chars_per_token: 4.0,
            },
        };
        let text = "Known CTEPH,\nstatus post PTE · doing well, café.".to_string();
        let s = chunk_note(&note(text.clone()), &cfg).unwrap();
        let joined: String = s.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, text);
        assert!(s.iter().all(|s| s.text.chars().count() <= 12));
        assert_eq!(cfg.tokenizer.count(&text), s.last().unwrap().end_token);
    }

    #[test]
    fn invalid_configs() {
        let bad = ChunkerConfig {
            snippet_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChunkerConfig {
            snippet_size: 4,
            overlap: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChunkerConfig {
            tokenizer: Tokenizer::CharBudget {
                chars_per_token: 0.5,
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
