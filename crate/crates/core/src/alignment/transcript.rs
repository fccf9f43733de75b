use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic class. Files carry `"CH"` / `"AD"`; AD is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CH")]
    HealthyControl,
    #[serde(rename = "AD")]
    Alzheimers,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::HealthyControl, Label::Alzheimers];

    pub fn index(self) -> usize {
        match self {
            Label::HealthyControl => 0,
            Label::Alzheimers => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::HealthyControl),
            1 => Some(Label::Alzheimers),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::HealthyControl => "CH",
            Label::Alzheimers => "AD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CH" => Ok(Label::HealthyControl),
            "AD" => Ok(Label::Alzheimers),
            other => Err(Error::contract(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word {
    #[serde(rename = "word")]
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl Word {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Word {
            text: text.into(),
            start,
            end,
        }
    }
}

/// Timestamped words of one recording.
///
/// Constructed through [`Transcript::new`], which sorts words by start
/// time and clips overlaps so that `end(i) <= start(i+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub subject_id: String,
    pub words: Vec<Word>,
    pub label: Option<Label>,
    pub mmse: Option<f64>,
}

impl Transcript {
    /// Validates and normalizes. Returns the transcript and the number of
    /// word ends that were clipped to remove overlaps.
    pub fn new(
        subject_id: impl Into<String>,
        mut words: Vec<Word>,
        label: Option<Label>,
        mmse: Option<f64>,
    ) -> Result<(Self, usize)> {
        if words.is_empty() {
            return Err(Error::contract("transcript has no words"));
        }
        for (i, w) in words.iter().enumerate() {
            if !(w.start.is_finite() && w.end.is_finite()) || w.start < 0.0 || w.end < 0.0 {
                return Err(Error::contract(format!(
                    "word {i} ({:?}) has an invalid time [{}, {}]",
                    w.text, w.start, w.end
                )));
            }
        }
        if let Some(m) = mmse {
            if !(0.0..=30.0).contains(&m) {
                return Err(Error::contract(format!("MMSE {m} outside [0, 30]")));
            }
        }
        words.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut clipped = 0;
        for i in 0..words.len().saturating_sub(1) {
            let next_start = words[i + 1].start;
            if words[i].end > next_start {
                words[i].end = next_start;
                clipped += 1;
            }
        }
        for (i, w) in words.iter().enumerate() {
            if w.start >= w.end {
                return Err(Error::contract(format!(
                    "word {i} ({:?}) has start {} >= end {}",
                    w.text, w.start, w.end
                )));
            }
        }
        Ok((
            Transcript {
                subject_id: subject_id.into(),
                words,
                label,
                mmse,
            },
            clipped,
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Trims ASR punctuation from word edges and drops words that were
    /// nothing but punctuation. Returns the cleaned transcript and, for each
    /// original word, its index in the cleaned transcript (if kept).
    pub fn strip_punctuation(&self) -> Result<(Transcript, Vec<Option<usize>>)> {
        let mut kept = Vec::with_capacity(self.words.len());
        let mut map = Vec::with_capacity(self.words.len());
        for w in &self.words {
            let text = w
                .text
                .trim()
                .trim_matches(|c: char| is_asr_punct(c))
                .to_string();
            if text.is_empty() {
                map.push(None);
            } else {
                map.push(Some(kept.len()));
                kept.push(Word {
                    text,
                    start: w.start,
                    end: w.end,
                });
            }
        }
        if kept.is_empty() {
            return Err(Error::contract(format!(
                "transcript {} is empty after removing punctuation",
                self.subject_id
            )));
        }
        Ok((
            Transcript {
                subject_id: self.subject_id.clone(),
                words: kept,
                label: self.label,
                mmse: self.mmse,
            },
            map,
        ))
    }
}

fn is_asr_punct(c: char) -> bool {
    (c.is_ascii_punctuation() && c != '\'') || matches!(c, '…' | '¿' | '¡' | '“' | '”')
}
