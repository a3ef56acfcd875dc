use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{FanError, Result};
use crate::scalar::Scalar;

use super::Dataset;

/// Subject-to-fold assignment for person-independent cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignment: BTreeMap<String, usize>,
}

/// Sort key that zero-pads every run of digits, so `S5 < S10`.
pub fn canonical_subject_key(id: &str) -> String {
    const WIDTH: usize = 20;
    let mut out = String::with_capacity(id.len() + WIDTH);
    let mut digits = String::new();
    let flush = |digits: &mut String, out: &mut String| {
        if !digits.is_empty() {
            let trimmed = digits.trim_start_matches('0');
            for _ in trimmed.len()..WIDTH {
                out.push('0');
            }
            out.push_str(trimmed);
            digits.clear();
        }
    };
    for ch in id.chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else {
            flush(&mut digits, &mut out);
            out.push(ch);
        }
    }
    flush(&mut digits, &mut out);
    out
}

/// Sorts subjects ascending and deals them round-robin: the subject at
/// sorted position `p` goes to fold `p mod fold_count`.
pub fn build_folds<T: Scalar>(dataset: &Dataset<T>, fold_count: usize) -> Result<FoldPlan> {
    build_folds_from_subjects(dataset.subjects(), fold_count)
}

pub fn build_folds_from_subjects<'a>(
    subjects: impl IntoIterator<Item = &'a str>,
    fold_count: usize,
) -> Result<FoldPlan> {
    if fold_count == 0 {
        return Err(FanError::Config("fold count must be positive".into()));
    }
    let mut sorted: Vec<&str> = subjects.into_iter().collect();
    sorted.sort_by(|a, b| {
        canonical_subject_key(a)
            .cmp(&canonical_subject_key(b))
            .then(a.cmp(b))
    });
    sorted.dedup();
    if sorted.len() < fold_count {
        return Err(FanError::Config(format!(
            "{} subjects cannot fill {fold_count} folds",
            sorted.len()
        )));
    }
    let assignment = sorted
        .into_iter()
        .enumerate()
        .map(|(p, s)| (s.to_string(), p % fold_count))
        .collect();
    Ok(FoldPlan {
        fold_count,
        assignment,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.assignment.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect();
        out.sort_by_key(|s| canonical_subject_key(s));
        out
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Instance indices of the dataset whose subject is in / out of `fold`.
    /// Errors if an instance's subject is not covered by the plan.
    pub fn split<T: Scalar>(
        &self,
        dataset: &Dataset<T>,
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, inst) in dataset.instances.iter().enumerate() {
            match self.fold_of(&inst.subject_id) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(FanError::Config(format!(
                        "subject {:?} is not covered by the fold plan",
                        inst.subject_id
                    )))
                }
            }
        }
        Ok((train, test))
    }
}
