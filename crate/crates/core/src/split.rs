//! Exam-grouped train/test/validation assignment.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("need at least 3 exams to split, got {0}")]
    TooFewExams(usize),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
}

/// Fractions of exams assigned to train, test and validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, test: 0.1, validation: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), SplitError> {
        let f = [self.train, self.test, self.validation];
        if f.iter().any(|&x| !(x > 0.0)) || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadFractions(f));
        }
        Ok(())
    }
}

/// Shuffles the distinct exams with `seed` and cuts them by fraction.
/// Every instance inherits the split of its exam.
pub fn split_by_exam<S: AsRef<str>>(
    exam_ids: &[S],
    fractions: SplitFractions,
    seed: u64,
) -> Result<HashMap<String, Split>, SplitError> {
    fractions.validate()?;
    let exams: BTreeSet<&str> = exam_ids.iter().map(AsRef::as_ref).collect();
    let n = exams.len();
    if n < 3 {
        return Err(SplitError::TooFewExams(n));
    }
    let mut order: Vec<&str> = exams.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64 * fractions.train).round() as usize).clamp(1, n - 2);
    let n_test = ((n as f64 * fractions.test).round() as usize).clamp(1, n - n_train - 1);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, exam)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_test {
                Split::Test
            } else {
                Split::Validation
            };
            (exam.to_owned(), split)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_exams_split_80_10_10() {
        let exams: Vec<String> = (0..100).map(|i| format!("e{i}")).collect();
        let s = split_by_exam(&exams, SplitFractions::default(), 7).unwrap();
        let count = |k| s.values().filter(|&&v| v == k).count();
        assert_eq!((count(Split::Train), count(Split::Test), count(Split::Validation)), (80, 10, 10));
    }

    #[test]
    fn instances_follow_their_exam() {
        // three instances per exam
        let ids: Vec<String> = (0..60).map(|i| format!("e{}", i / 3)).collect();
        let s = split_by_exam(&ids, SplitFractions::default(), 1).unwrap();
        assert_eq!(s.len(), 20);
        for id in &ids {
            assert!(s.contains_key(id));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let exams: Vec<String> = (0..50).map(|i| format!("e{i}")).collect();
        let a = split_by_exam(&exams, SplitFractions::default(), 3).unwrap();
        let b = split_by_exam(&exams, SplitFractions::default(), 3).unwrap();
        assert_eq!(a, b);
        let c = split_by_exam(&exams, SplitFractions::default(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn errors() {
        assert_eq!(
            split_by_exam(&["a", "b"], SplitFractions::default(), 0),
            Err(SplitError::TooFewExams(2))
        );
        let bad = SplitFractions { train: 0.9, test: 0.1, validation: 0.1 };
        assert!(matches!(split_by_exam(&["a", "b", "c"], bad, 0), Err(SplitError::BadFractions(_))));
    }
}
