//! Minimum-edit-distance word alignment and word error rate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NormalizedSentence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("word error rate is undefined for an empty reference")]
    UndefinedWer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditOp {
    Match(String),
    Substitution { reference: String, hypothesis: String },
    Insertion(String),
    Deletion(String),
}

impl EditOp {
    pub fn kind(&self) -> &'static str {
        match self {
            EditOp::Match(_) => "match",
            EditOp::Substitution { .. } => "substitution",
            EditOp::Insertion(_) => "insertion",
            EditOp::Deletion(_) => "deletion",
        }
    }

    pub fn ref_token(&self) -> Option<&str> {
        match self {
            EditOp::Match(t) | EditOp::Deletion(t) => Some(t),
            EditOp::Substitution { reference, .. } => Some(reference),
            EditOp::Insertion(_) => None,
        }
    }

    pub fn hyp_token(&self) -> Option<&str> {
        match self {
            EditOp::Match(t) | EditOp::Insertion(t) => Some(t),
            EditOp::Substitution { hypothesis, .. } => Some(hypothesis),
            EditOp::Deletion(_) => None,
        }
    }

    pub fn is_error(&self) -> bool {
        !matches!(self, EditOp::Match(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "N")]
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

impl std::ops::Add for ErrorCounts {
    type Output = ErrorCounts;

    fn add(self, rhs: ErrorCounts) -> ErrorCounts {
        ErrorCounts {
            substitutions: self.substitutions + rhs.substitutions,
            insertions: self.insertions + rhs.insertions,
            deletions: self.deletions + rhs.deletions,
            ref_len: self.ref_len + rhs.ref_len,
        }
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = ErrorCounts>>(iter: I) -> ErrorCounts {
        iter.fold(ErrorCounts::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub counts: ErrorCounts,
}

/// An error count over a reference length, kept as integers so that two
/// rates compare exactly.
#[derive(Debug, Clone, Copy, Eq, Serialize, Deserialize)]
pub struct WerRatio {
    pub errors: usize,
    pub ref_len: usize,
}

impl WerRatio {
    pub fn as_f64(&self) -> f64 {
        self.errors as f64 / self.ref_len as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.as_f64()
    }
}

impl PartialEq for WerRatio {
    fn eq(&self, other: &Self) -> bool {
        self.errors as u128 * other.ref_len as u128 == other.errors as u128 * self.ref_len as u128
    }
}

impl fmt::Display for WerRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%", self.percent())
    }
}

/// Unit-cost Levenshtein alignment over tokens.
///
/// Backtrace starts at the sequence ends and prefers, among optimal moves,
/// match > substitution > deletion > insertion.
pub fn align(reference: &NormalizedSentence, hypothesis: &NormalizedSentence) -> Alignment {
    align_tokens(reference.tokens(), hypothesis.tokens())
}

pub fn align_tokens<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Alignment {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * width] = i;
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = cost[(i - 1) * width + j - 1] + usize::from(!same);
            let del = cost[(i - 1) * width + j] + 1;
            let ins = cost[i * width + j - 1] + 1;
            cost[i * width + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let mut counts = ErrorCounts {
        ref_len: n,
        ..ErrorCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let r = reference[i - 1].as_ref();
            let h = hypothesis[j - 1].as_ref();
            let diag = cost[(i - 1) * width + j - 1];
            if r == h && here == diag {
                ops.push(EditOp::Match(r.to_owned()));
                i -= 1;
                j -= 1;
                continue;
            }
            if r != h && here == diag + 1 {
                ops.push(EditOp::Substitution {
                    reference: r.to_owned(),
                    hypothesis: h.to_owned(),
                });
                counts.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * width + j] + 1 {
            ops.push(EditOp::Deletion(reference[i - 1].as_ref().to_owned()));
            counts.deletions += 1;
            i -= 1;
        } else {
            debug_assert!(j > 0 && here == cost[i * width + j - 1] + 1);
            ops.push(EditOp::Insertion(hypothesis[j - 1].as_ref().to_owned()));
            counts.insertions += 1;
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops, counts }
}

pub fn wer(counts: &ErrorCounts) -> Result<WerRatio, AlignError> {
    if counts.ref_len == 0 {
        return Err(AlignError::UndefinedWer);
    }
    Ok(WerRatio {
        errors: counts.errors(),
        ref_len: counts.ref_len,
    })
}

/// Pooled WER: total errors over total reference length.
pub fn corpus_wer<'a, I>(alignments: I) -> Result<WerRatio, AlignError>
where
    I: IntoIterator<Item = &'a Alignment>,
{
    let total: ErrorCounts = alignments.into_iter().map(|a| a.counts).sum();
    wer(&total)
}
