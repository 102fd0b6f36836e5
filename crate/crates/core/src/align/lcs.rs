use serde::{Deserialize, Serialize};

use super::{check_pair, AlignError, AlignmentResult};
use crate::phoneme::{Similarity, TokenSequence};

const EPS: f64 = 1e-9;

/// Match scores for the similarity-weighted LCS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringScheme {
    pub exact_score: f64,
    pub similar_score: f64,
    /// `None` forbids dissimilar matches.
    pub dissimilar: Option<f64>,
    /// Charged once per unmatched token on either side.
    pub skip_cost: f64,
}

impl Default for ScoringScheme {
    fn default() -> Self {
        ScoringScheme { exact_score: 2.0, similar_score: 1.0, dissimilar: None, skip_cost: 0.0 }
    }
}

impl ScoringScheme {
    /// Exact matches only, one point each: plain LCS.
    pub fn exact_only() -> Self {
        ScoringScheme { exact_score: 1.0, similar_score: 0.0, dissimilar: None, skip_cost: 0.0 }
    }

    fn score(&self, s: Similarity, allow_similar: bool) -> Option<f64> {
        match s {
            Similarity::Exact => Some(self.exact_score),
            Similarity::Similar if allow_similar => Some(self.similar_score),
            Similarity::Similar => None,
            Similarity::Dissimilar => self.dissimilar,
        }
    }
}

/// LCS over exact token equality.
pub fn hard_lcs(reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<AlignmentResult, AlignError> {
    check_pair(reference, dysfluent)?;
    Ok(weighted_lcs(reference, dysfluent, &ScoringScheme::exact_only(), false))
}

/// LCS where same-category tokens may match at a reduced score.
pub fn soft_lcs(
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
    scheme: &ScoringScheme,
) -> Result<AlignmentResult, AlignError> {
    check_pair(reference, dysfluent)?;
    Ok(weighted_lcs(reference, dysfluent, scheme, true))
}

fn weighted_lcs(
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
    scheme: &ScoringScheme,
    allow_similar: bool,
) -> AlignmentResult {
    let (n, m) = (reference.len(), dysfluent.len());
    let width = m + 1;
    let pair_score: Vec<Option<f64>> = (0..n * m)
        .map(|k| scheme.score(reference[k / m].similarity(&dysfluent[k % m]), allow_similar))
        .collect();
    let mut table = vec![0.0f64; (n + 1) * width];
    for j in 0..=m {
        table[j] = -scheme.skip_cost * j as f64;
    }
    for i in 1..=n {
        table[i * width] = -scheme.skip_cost * i as f64;
        for j in 1..=m {
            let mut best = (table[(i - 1) * width + j] - scheme.skip_cost).max(table[i * width + j - 1] - scheme.skip_cost);
            if let Some(s) = pair_score[(i - 1) * m + j - 1] {
                best = best.max(table[(i - 1) * width + j - 1] + s);
            }
            table[i * width + j] = best;
        }
    }

    // Backtrace from the end: match, then skip a dysfluent token, then skip a
    // reference token. Walking backwards this hands each reference token the
    // latest dysfluent partner among optimal alignments.
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = table[i * width + j];
        if let Some(s) = pair_score[(i - 1) * m + j - 1] {
            if (here - (table[(i - 1) * width + j - 1] + s)).abs() < EPS {
                pairs.push((i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if (here - (table[i * width + j - 1] - scheme.skip_cost)).abs() < EPS {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    pairs.reverse();
    AlignmentResult::from_pairs(pairs, n, m, table[n * width + m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    #[test]
    fn hard_lcs_examples() {
        let r = hard_lcs(&seq("P EH N"), &seq("P K EH N N")).unwrap();
        assert_eq!(r.matched_pairs.len(), 3);
        // the later N wins the tie
        assert_eq!(r.matched_pairs, vec![(0, 0), (1, 2), (2, 4)]);
        assert_eq!(r.labels.dys_labels, vec![1, 0, 1, 0, 1]);

        let same = hard_lcs(&seq("P EH N"), &seq("P EH N")).unwrap();
        assert_eq!(same.labels.ref_labels, vec![1, 1, 1]);
        assert_eq!(same.labels.dys_labels, vec![1, 1, 1]);

        let disjoint = hard_lcs(&seq("P EH N"), &seq("S AO M")).unwrap();
        assert!(disjoint.matched_pairs.is_empty());
        assert_eq!(disjoint.labels.ref_labels, vec![2, 2, 2]);
        assert_eq!(disjoint.labels.dys_labels, vec![0, 0, 0]);
    }

    #[test]
    fn repetition_copies_match_the_last_instance() {
        let r = hard_lcs(&seq("T EY"), &seq("T T T EY")).unwrap();
        assert_eq!(r.labels.dys_labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn soft_lcs_examples() {
        let r = soft_lcs(&seq("P EH N"), &seq("B EH N"), &ScoringScheme::default()).unwrap();
        assert_eq!(r.matched_pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(r.score, 5.0);

        let x = seq("AH P EH N");
        assert_eq!(soft_lcs(&x, &x, &ScoringScheme::default()).unwrap().score, 8.0);

        let v = soft_lcs(&seq("AH"), &seq("UH"), &ScoringScheme::default()).unwrap();
        assert_eq!(v.matched_pairs, vec![(0, 0)]);
        assert_eq!(v.score, 1.0);
    }

    #[test]
    fn skip_cost_and_dissimilar_scores() {
        let scheme = ScoringScheme { skip_cost: 0.5, ..Default::default() };
        let r = soft_lcs(&seq("P EH"), &seq("P K EH"), &scheme).unwrap();
        assert_eq!(r.score, 3.5);
        let loose = ScoringScheme { dissimilar: Some(0.25), ..Default::default() };
        let r = soft_lcs(&seq("P"), &seq("AH"), &loose).unwrap();
        assert_eq!(r.matched_pairs, vec![(0, 0)]);
    }

    #[test]
    fn level_mismatch_and_empty() {
        let words = TokenSequence::parse(Level::Word, "a pen").unwrap();
        assert!(matches!(hard_lcs(&seq("P"), &words), Err(AlignError::LevelMismatch { .. })));
        let empty = TokenSequence::parse(Level::Phoneme, "").unwrap();
        assert_eq!(hard_lcs(&empty, &seq("P")), Err(AlignError::Empty));
    }
}
