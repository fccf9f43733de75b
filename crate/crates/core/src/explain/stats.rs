use serde::{Deserialize, Serialize};

use crate::alignment::{detect_pauses, Label, PauseCategory, Transcript};
use crate::error::{Error, Result};

/// Per-subject means within one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub comma: f64,
    pub period: f64,
    pub ellipsis: f64,
    /// Seconds from the recording start to the end of the last word.
    pub duration: f64,
    pub words: f64,
}

impl ClassMeans {
    pub fn pause_mean(&self, c: PauseCategory) -> f64 {
        match c {
            PauseCategory::Comma => self.comma,
            PauseCategory::Period => self.period,
            PauseCategory::Ellipsis => self.ellipsis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: Label,
    pub subjects: usize,
    /// `None` when the class has no subjects.
    pub means: Option<ClassMeans>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub classes: Vec<ClassStats>,
}

impl CorpusStats {
    pub fn class(&self, label: Label) -> &ClassStats {
        &self.classes[label.index()]
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("class\tsubjects\tcomma\tperiod\tellipsis\tduration_s\twords\n");
        for c in &self.classes {
            match &c.means {
                Some(m) => s.push_str(&format!(
                    "{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n",
                    c.label, c.subjects, m.comma, m.period, m.ellipsis, m.duration, m.words
                )),
                None => s.push_str(&format!("{}\t0\t-\t-\t-\t-\t-\n", c.label)),
            }
        }
        s
    }
}

/// Per-class means of pause counts by category, durations and word counts.
pub fn corpus_stats(transcripts: &[Transcript]) -> Result<CorpusStats> {
    let mut sums = [[0.0f64; 5]; 2];
    let mut counts = [0usize; 2];
    for t in transcripts {
        let label = t
            .label
            .ok_or_else(|| Error::contract(format!("subject {} has no label", t.subject_id)))?;
        let k = label.index();
        counts[k] += 1;
        for e in detect_pauses(t) {
            sums[k][e.category.index()] += 1.0;
        }
        sums[k][3] += t.words.last().map_or(0.0, |w| w.end);
        sums[k][4] += t.words.len() as f64;
    }
    let classes = Label::ALL
        .iter()
        .map(|&label| {
            let k = label.index();
            let n = counts[k];
            let means = (n > 0).then(|| {
                let m = |j: usize| sums[k][j] / n as f64;
                ClassMeans {
                    comma: m(0),
                    period: m(1),
                    ellipsis: m(2),
                    duration: m(3),
                    words: m(4),
                }
            });
            ClassStats {
                label,
                subjects: n,
                means,
            }
        })
        .collect();
    Ok(CorpusStats { classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Word;

    fn with_gaps(id: &str, label: Option<Label>, gaps: &[f64]) -> Transcript {
        let mut words = vec![Word::new("a", 0.0, 0.2)];
        let mut t = 0.2;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            words.push(Word::new(format!("w{i}"), t, t + 0.2));
            t += 0.2;
        }
        Transcript::new(id, words, label, None).unwrap().0
    }

    #[test]
    fn comma_means() {
        let ch = Some(Label::HealthyControl);
        let ts = [with_gaps("a", ch, &[0.6]), with_gaps("b", ch, &[0.6, 0.7, 0.8])];
        let s = corpus_stats(&ts).unwrap();
        let m = s.class(Label::HealthyControl).means.as_ref().unwrap();
        assert_eq!(m.comma, 2.0);
        assert_eq!(m.words, 3.0);
        assert!(s.class(Label::Alzheimers).means.is_none());
        assert!(s.to_table().contains("AD\t0\t-"));
    }

    #[test]
    fn unlabeled_subject_is_an_error() {
        assert!(corpus_stats(&[with_gaps("a", None, &[])]).is_err());
    }

    #[test]
    fn order_does_not_matter() {
        let ts = vec![
            with_gaps("a", Some(Label::Alzheimers), &[2.0, 1.2]),
            with_gaps("b", Some(Label::HealthyControl), &[0.6]),
            with_gaps("c", Some(Label::Alzheimers), &[0.1]),
        ];
        let mut rev = ts.clone();
        rev.reverse();
        assert_eq!(corpus_stats(&ts).unwrap(), corpus_stats(&rev).unwrap());
        let m = corpus_stats(&ts).unwrap();
        let ad = m.class(Label::Alzheimers).means.clone().unwrap();
        assert_eq!((ad.ellipsis, ad.period), (0.5, 0.5));
    }
}
