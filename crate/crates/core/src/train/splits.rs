use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::Label;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Serialized as its display form (`"kfold5"`, `"loso"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Protocol {
    KFold(usize),
    Loso,
}

impl From<Protocol> for String {
    fn from(p: Protocol) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Protocol {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::KFold(k) => write!(f, "kfold{k}"),
            Protocol::Loso => f.write_str("loso"),
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    /// Accepts `loso`, `kfold5`, `kfold:5` or a bare fold count.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "loso" {
            return Ok(Protocol::Loso);
        }
        let digits = lower
            .strip_prefix("kfold")
            .map(|r| r.trim_start_matches([':', '=', '-']))
            .unwrap_or(&lower);
        digits
            .parse()
            .map(Protocol::KFold)
            .map_err(|_| Error::contract(format!("unknown protocol {s:?}; use loso or kfold<k>")))
    }
}

/// Fold assignment of each subject. Fold `f`'s test set is the subjects
/// assigned to `f`; its training set is everyone else.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub subject_ids: Vec<String>,
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn test(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    /// Asserts that every fold's train and test subjects are disjoint and
    /// that the test sets cover the roster exactly once.
    pub fn check_isolation(&self) -> Result<()> {
        let mut seen = vec![0usize; self.fold_of.len()];
        for f in 0..self.n_folds {
            let test: HashSet<&str> = self.test(f).iter().map(|&i| self.subject_ids[i].as_str()).collect();
            if self.train(f).iter().any(|&i| test.contains(self.subject_ids[i].as_str())) {
                return Err(Error::contract(format!("fold {f} leaks a subject into training")));
            }
            for i in self.test(f) {
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::contract("test folds do not partition the subjects"));
        }
        Ok(())
    }
}

/// Assigns subjects to folds. KFold is stratified by label when every
/// subject has one: each class is shuffled and dealt round-robin, so class
/// counts per fold differ by at most one.
pub fn make_splits(subjects: &[(String, Option<Label>)], protocol: Protocol, seed: u64) -> Result<SplitPlan> {
    let n = subjects.len();
    if n == 0 {
        return Err(Error::contract("cannot split an empty roster"));
    }
    let mut ids = HashSet::new();
    for (id, _) in subjects {
        if !ids.insert(id.as_str()) {
            return Err(Error::contract(format!("subject {id} appears twice")));
        }
    }
    let subject_ids: Vec<String> = subjects.iter().map(|(s, _)| s.clone()).collect();
    match protocol {
        Protocol::Loso => Ok(SplitPlan {
            protocol,
            subject_ids,
            fold_of: (0..n).collect(),
            n_folds: n,
            stratified: false,
        }),
        Protocol::KFold(k) => {
            if k < 2 {
                return Err(Error::contract(format!("k-fold needs k >= 2, got {k}")));
            }
            if k > n {
                return Err(Error::contract(format!("{k} folds requested for {n} subjects")));
            }
            let mut rng = stream_rng(seed, "splits");
            let stratified = subjects.iter().all(|(_, l)| l.is_some());
            let groups: Vec<Vec<usize>> = if stratified {
                Label::ALL
                    .iter()
                    .map(|c| (0..n).filter(|&i| subjects[i].1 == Some(*c)).collect())
                    .collect()
            } else {
                vec![(0..n).collect()]
            };
            let mut fold_of = vec![0; n];
            let mut next = 0;
            for mut g in groups {
                g.shuffle(&mut rng);
                for i in g {
                    fold_of[i] = next % k;
                    next += 1;
                }
            }
            Ok(SplitPlan {
                protocol,
                subject_ids,
                fold_of,
                n_folds: k,
                stratified,
            })
        }
    }
}

/// Carves a stratified validation subset of about `fraction` out of
/// `indices`. Each class with at least two members contributes at least
/// one validation subject.
pub fn holdout_split(
    indices: &[usize],
    labels: &[Option<Label>],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, "holdout");
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); Label::ALL.len() + 1];
    for &i in indices {
        let slot = labels[i].map_or(Label::ALL.len(), |l| l.index());
        classes[slot].push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut c in classes {
        c.shuffle(&mut rng);
        let take = if c.len() >= 2 {
            ((c.len() as f64 * fraction).round() as usize).clamp(1, c.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&c[..take]);
        train.extend_from_slice(&c[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}
