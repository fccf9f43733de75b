use serde::{Deserialize, Serialize};

use crate::alignment::Label;

/// Two-class confusion counts indexed `[actual][predicted]` by
/// [`Label::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn from_counts(counts: [[usize; 2]; 2]) -> Self {
        Confusion { counts }
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for a in 0..2 {
            for p in 0..2 {
                self.counts[a][p] += other.counts[a][p];
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }
}

/// Per-class precision, recall and F1 in percent; zero when undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Rates in percent, macro-averaged over the two classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn class_scores(c: &Confusion, class: usize) -> ClassScores {
    let tp = c.counts[class][class];
    let predicted: usize = (0..2).map(|a| c.counts[a][class]).sum();
    let actual: usize = c.counts[class].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

pub fn metrics_from_confusion(c: &Confusion) -> Metrics {
    let per_class: Vec<ClassScores> = (0..2).map(|k| class_scores(c, k)).collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / 2.0;
    Metrics {
        n: c.total(),
        accuracy: ratio(c.correct(), c.total()),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_class,
        rmse: None,
    }
}

/// Root mean squared error with predictions clamped to the MMSE range.
pub fn rmse_clamped(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sse: f64 = pairs
        .iter()
        .map(|&(pred, truth)| (pred.clamp(0.0, 30.0) - truth).powi(2))
        .sum();
    Some((sse / pairs.len() as f64).sqrt())
}
