//! Deterministic aligners: exact-match LCS, similarity-weighted LCS and DTW.
//!
//! Every aligner reports a monotone list of matched `(ref, dys)` pairs and
//! the joint labels derived from it: matched dysfluent tokens get 1,
//! unmatched dysfluent tokens 0 and unmatched reference tokens 2.

mod dtw;
mod lcs;
pub mod oracle;

pub use dtw::{dtw_align, dtw_align_with, DtwCosts};
pub use lcs::{hard_lcs, soft_lcs, ScoringScheme};

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::phoneme::{Level, TokenSequence};
use crate::simulator::{JointLabelEncoding, LABEL_BOUNDARY, LABEL_DYSFLUENT, LABEL_MISSING};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("cannot align a {reference} reference with a {dysfluent} sequence")]
    LevelMismatch { reference: Level, dysfluent: Level },
    #[error("cannot align an empty sequence")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub labels: JointLabelEncoding,
    pub matched_pairs: Vec<(usize, usize)>,
    pub score: f64,
}

impl AlignmentResult {
    pub(crate) fn from_pairs(pairs: Vec<(usize, usize)>, ref_len: usize, dys_len: usize, score: f64) -> Self {
        let mut ref_labels = vec![LABEL_MISSING; ref_len];
        let mut dys_labels = vec![LABEL_DYSFLUENT; dys_len];
        for &(i, j) in &pairs {
            ref_labels[i] = LABEL_BOUNDARY;
            dys_labels[j] = LABEL_BOUNDARY;
        }
        AlignmentResult { labels: JointLabelEncoding { ref_labels, dys_labels }, matched_pairs: pairs, score }
    }

    /// Strictly increasing in both coordinates.
    pub fn is_monotone(&self) -> bool {
        self.matched_pairs.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1)
    }
}

pub(crate) fn check_pair(reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<(), AlignError> {
    if reference.level() != dysfluent.level() {
        return Err(AlignError::LevelMismatch { reference: reference.level(), dysfluent: dysfluent.level() });
    }
    if reference.is_empty() || dysfluent.is_empty() {
        return Err(AlignError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicMethod {
    Hard,
    Soft,
    Dtw,
}

impl ClassicMethod {
    pub fn align(self, reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<AlignmentResult, AlignError> {
        match self {
            ClassicMethod::Hard => hard_lcs(reference, dysfluent),
            ClassicMethod::Soft => soft_lcs(reference, dysfluent, &ScoringScheme::default()),
            ClassicMethod::Dtw => dtw_align(reference, dysfluent),
        }
    }
}

impl fmt::Display for ClassicMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassicMethod::Hard => "hard",
            ClassicMethod::Soft => "soft",
            ClassicMethod::Dtw => "dtw",
        })
    }
}

impl FromStr for ClassicMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(ClassicMethod::Hard),
            "soft" => Ok(ClassicMethod::Soft),
            "dtw" => Ok(ClassicMethod::Dtw),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}
