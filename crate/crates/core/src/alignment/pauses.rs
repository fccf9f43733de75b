use std::fmt;

use serde::{Deserialize, Serialize};

use super::frames::FrameStream;
use super::transcript::Transcript;
use crate::error::{Error, Result};

/// Shortest silence that counts as a pause, in seconds.
pub const MIN_PAUSE: f64 = 0.5;
pub const PERIOD_FROM: f64 = 1.0;
pub const ELLIPSIS_FROM: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PauseCategory {
    Comma,
    Period,
    Ellipsis,
}

impl PauseCategory {
    pub const ALL: [PauseCategory; 3] = [
        PauseCategory::Comma,
        PauseCategory::Period,
        PauseCategory::Ellipsis,
    ];

    /// Punctuation mark inserted into the token stream.
    pub fn symbol(self) -> &'static str {
        match self {
            PauseCategory::Comma => ",",
            PauseCategory::Period => ".",
            PauseCategory::Ellipsis => "...",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        PauseCategory::ALL.into_iter().find(|c| c.symbol() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PauseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Buckets a silence: `[0, 0.5)` none, `[0.5, 1)` comma, `[1, 1.5)` period,
/// `[1.5, ∞)` ellipsis. Each boundary belongs to the longer bucket.
pub fn classify_pause(duration: f64) -> Result<Option<PauseCategory>> {
    if duration.is_nan() || duration < 0.0 {
        return Err(Error::contract(format!("pause duration {duration} is negative")));
    }
    Ok(if duration < MIN_PAUSE {
        None
    } else if duration < PERIOD_FROM {
        Some(PauseCategory::Comma)
    } else if duration < ELLIPSIS_FROM {
        Some(PauseCategory::Period)
    } else {
        Some(PauseCategory::Ellipsis)
    })
}

/// Silence between word `after_word_index` and the next word.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauseEvent {
    pub start: f64,
    pub end: f64,
    pub category: PauseCategory,
    pub after_word_index: usize,
}

impl PauseEvent {
    pub fn duration(&self) -> f64 {
        gap_seconds(self.start, self.end)
    }
}

/// Gap length rounded to whole nanoseconds, so that timestamps like
/// `0.7 - 0.2` land on the intended bucket instead of 0.49999999999999994.
pub fn gap_seconds(end_prev: f64, start_next: f64) -> f64 {
    ((start_next - end_prev) * 1e9).round() / 1e9
}

/// One event per inter-word gap of at least [`MIN_PAUSE`] seconds. Silence
/// before the first or after the last word is ignored.
pub fn detect_pauses(transcript: &Transcript) -> Vec<PauseEvent> {
    transcript
        .words
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let gap = gap_seconds(w[0].end, w[1].start);
            let category = classify_pause(gap.max(0.0)).ok().flatten()?;
            Some(PauseEvent {
                start: w[0].end,
                end: w[1].start,
                category,
                after_word_index: i,
            })
        })
        .collect()
}

/// Audio embedding of a pause: mean of frames in `[start, end)`, with the
/// nearest-frame fallback when the interval holds no frame.
pub fn pause_embedding(stream: &FrameStream, event: &PauseEvent) -> Result<Vec<f32>> {
    stream.mean_over(event.start, event.end)
}
