//! Joint label encoding and its conversion to and from grouped alignments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phoneme::{Similarity, Token, TokenSequence};

pub const LABEL_DYSFLUENT: u8 = 0;
pub const LABEL_BOUNDARY: u8 = 1;
pub const LABEL_MISSING: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignmentError {
    #[error("alignment has {groups} groups for a reference of length {reference}")]
    GroupCount { groups: usize, reference: usize },
    #[error("group {index} is empty or its boundary lies outside its span")]
    BadGroup { index: usize },
    #[error("group {index} does not start where the previous group ended")]
    NotContiguous { index: usize },
    #[error("groups cover {covered} of {total} dysfluent tokens")]
    Coverage { covered: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("label lengths {ref_labels}/{dys_labels} do not match sequence lengths {reference}/{dysfluent}")]
    Length { ref_labels: usize, dys_labels: usize, reference: usize, dysfluent: usize },
    #[error("invalid {side} label {label} at position {position}")]
    InvalidLabel { side: &'static str, position: usize, label: u8 },
    #[error("{reference} surviving reference tokens but {boundaries} boundaries")]
    CountMismatch { reference: usize, boundaries: usize },
    #[error("dysfluent tokens present but no reference token survives")]
    Unanchored,
}

/// Per-reference labels in {1, 2} and per-dysfluent labels in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointLabelEncoding {
    pub ref_labels: Vec<u8>,
    pub dys_labels: Vec<u8>,
}

impl JointLabelEncoding {
    /// Every reference token present and every dysfluent token a boundary.
    pub fn identity(len: usize) -> Self {
        JointLabelEncoding { ref_labels: vec![LABEL_BOUNDARY; len], dys_labels: vec![LABEL_BOUNDARY; len] }
    }

    pub fn surviving_count(&self) -> usize {
        self.ref_labels.iter().filter(|&&l| l == LABEL_BOUNDARY).count()
    }

    pub fn boundary_count(&self) -> usize {
        self.dys_labels.iter().filter(|&&l| l == LABEL_BOUNDARY).count()
    }

    pub fn is_consistent(&self) -> bool {
        self.surviving_count() == self.boundary_count()
    }

    pub fn len(&self) -> usize {
        self.ref_labels.len() + self.dys_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, reference: usize, dysfluent: usize) -> Result<(), CodecError> {
        if self.ref_labels.len() != reference || self.dys_labels.len() != dysfluent {
            return Err(CodecError::Length {
                ref_labels: self.ref_labels.len(),
                dys_labels: self.dys_labels.len(),
                reference,
                dysfluent,
            });
        }
        if let Some((i, &l)) = self
            .ref_labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != LABEL_BOUNDARY && l != LABEL_MISSING)
        {
            return Err(CodecError::InvalidLabel { side: "reference", position: i, label: l });
        }
        if let Some((i, &l)) = self
            .dys_labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != LABEL_BOUNDARY && l != LABEL_DYSFLUENT)
        {
            return Err(CodecError::InvalidLabel { side: "dysfluent", position: i, label: l });
        }
        if !self.is_consistent() {
            return Err(CodecError::CountMismatch {
                reference: self.surviving_count(),
                boundaries: self.boundary_count(),
            });
        }
        Ok(())
    }
}

/// Contiguous half-open span of dysfluent indices realising one reference token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Group {
    pub start: usize,
    pub end: usize,
    pub boundary: usize,
}

impl Group {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// One entry per reference token; `None` marks a deleted token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldAlignment {
    pub groups: Vec<Option<Group>>,
}

impl GoldAlignment {
    pub fn validate(&self, reference: usize, dysfluent: usize) -> Result<(), AlignmentError> {
        if self.groups.len() != reference {
            return Err(AlignmentError::GroupCount { groups: self.groups.len(), reference });
        }
        let mut cursor = 0;
        for (index, group) in self.groups.iter().enumerate() {
            let Some(g) = group else { continue };
            if g.is_empty() || g.boundary < g.start || g.boundary >= g.end {
                return Err(AlignmentError::BadGroup { index });
            }
            if g.start != cursor {
                return Err(AlignmentError::NotContiguous { index });
            }
            cursor = g.end;
        }
        if cursor != dysfluent {
            return Err(AlignmentError::Coverage { covered: cursor, total: dysfluent });
        }
        Ok(())
    }

    /// Renders groups as `AH-(UH UH EY) P-(P)`; deleted tokens print as `N-()`.
    pub fn pretty(&self, reference: &TokenSequence, dysfluent: &TokenSequence) -> String {
        let mut parts = Vec::with_capacity(self.groups.len());
        for (i, group) in self.groups.iter().enumerate() {
            let members = match group {
                Some(g) => g
                    .indices()
                    .map(|j| dysfluent[j].text().to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                None => String::new(),
            };
            parts.push(format!("{}-({})", reference[i], members));
        }
        parts.join(" ")
    }
}

impl fmt::Display for JointLabelEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ref={:?} dys={:?}", self.ref_labels, self.dys_labels)
    }
}

/// Index (within `members`) of the group boundary: the last token equal to
/// the reference token, else the last similar one, else the last token.
pub fn boundary_offset(reference: &Token, members: &[Token]) -> usize {
    debug_assert!(!members.is_empty());
    let last_with = |s: Similarity| members.iter().rposition(|t| reference.similarity(t) == s);
    last_with(Similarity::Exact)
        .or_else(|| last_with(Similarity::Similar))
        .unwrap_or(members.len() - 1)
}

pub fn gold_labels_from_alignment(
    gold: &GoldAlignment,
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
) -> Result<JointLabelEncoding, AlignmentError> {
    gold.validate(reference.len(), dysfluent.len())?;
    let mut ref_labels = vec![LABEL_MISSING; reference.len()];
    let mut dys_labels = vec![LABEL_DYSFLUENT; dysfluent.len()];
    for (i, group) in gold.groups.iter().enumerate() {
        if let Some(g) = group {
            ref_labels[i] = LABEL_BOUNDARY;
            dys_labels[g.boundary] = LABEL_BOUNDARY;
        }
    }
    Ok(JointLabelEncoding { ref_labels, dys_labels })
}

/// Rebuilds groups from labels.
///
/// The k-th surviving reference token owns the k-th boundary. A run of 0s
/// between two boundaries stays with the earlier group, except for its
/// longest suffix that matches (exactly or by category) the next surviving
/// reference token, which moves forward. Leading and trailing runs attach to
/// the first and last groups.
pub fn alignment_from_labels(
    labels: &JointLabelEncoding,
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
) -> Result<GoldAlignment, CodecError> {
    labels.check(reference.len(), dysfluent.len())?;
    let surviving: Vec<usize> = (0..reference.len())
        .filter(|&i| labels.ref_labels[i] == LABEL_BOUNDARY)
        .collect();
    let boundaries: Vec<usize> = (0..dysfluent.len())
        .filter(|&j| labels.dys_labels[j] == LABEL_BOUNDARY)
        .collect();
    let mut groups: Vec<Option<Group>> = vec![None; reference.len()];
    if surviving.is_empty() {
        if dysfluent.is_empty() {
            return Ok(GoldAlignment { groups });
        }
        return Err(CodecError::Unanchored);
    }

    let k = surviving.len();
    let mut starts = vec![0usize; k];
    let mut ends = vec![dysfluent.len(); k];
    for idx in 0..k - 1 {
        let (b, next_b) = (boundaries[idx], boundaries[idx + 1]);
        let next_ref = &reference[surviving[idx + 1]];
        let mut split = next_b;
        while split > b + 1 && next_ref.similarity(&dysfluent[split - 1]).is_match() {
            split -= 1;
        }
        ends[idx] = split;
        starts[idx + 1] = split;
    }
    for idx in 0..k {
        groups[surviving[idx]] = Some(Group { start: starts[idx], end: ends[idx], boundary: boundaries[idx] });
    }
    Ok(GoldAlignment { groups })
}

/// Reading-order flat labels: the dysfluent labels with a `2` placed after
/// the previous group's span for every deleted reference token.
pub fn serialize_flat(
    labels: &JointLabelEncoding,
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
) -> String {
    let mut out: Vec<u8> = Vec::with_capacity(labels.len());
    match alignment_from_labels(labels, reference, dysfluent) {
        Ok(alignment) => {
            for group in &alignment.groups {
                match group {
                    Some(g) => out.extend(g.indices().map(|j| labels.dys_labels[j])),
                    None => out.push(LABEL_MISSING),
                }
            }
        }
        Err(_) => {
            // Unpaired labels: anchor each deletion after the boundary of the
            // closest earlier surviving token.
            let mut boundaries = labels
                .dys_labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == LABEL_BOUNDARY)
                .map(|(j, _)| j);
            let mut insert_after: Vec<Option<usize>> = Vec::new();
            let mut last: Option<usize> = None;
            for &l in &labels.ref_labels {
                if l == LABEL_BOUNDARY {
                    last = boundaries.next().or(last);
                } else {
                    insert_after.push(last);
                }
            }
            let mut pending = insert_after.iter().peekable();
            while pending.peek().is_some_and(|a| a.is_none()) {
                out.push(LABEL_MISSING);
                pending.next();
            }
            for (j, &l) in labels.dys_labels.iter().enumerate() {
                out.push(l);
                while pending.peek().is_some_and(|a| **a == Some(j)) {
                    out.push(LABEL_MISSING);
                    pending.next();
                }
            }
            out.extend(pending.map(|_| LABEL_MISSING));
        }
    }
    out.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    fn labels(r: &[u8], d: &[u8]) -> JointLabelEncoding {
        JointLabelEncoding { ref_labels: r.to_vec(), dys_labels: d.to_vec() }
    }

    #[test]
    fn boundary_rule_prefers_last_exact_then_last_similar() {
        let t = Token::parse(Level::Phoneme, "T").unwrap();
        assert_eq!(boundary_offset(&t, seq("T T T").tokens()), 2);
        let eh = Token::parse(Level::Phoneme, "EH").unwrap();
        assert_eq!(boundary_offset(&eh, seq("EH K").tokens()), 0);
        let ah = Token::parse(Level::Phoneme, "AH").unwrap();
        assert_eq!(boundary_offset(&ah, seq("UH UH EY").tokens()), 2);
        let p = Token::parse(Level::Phoneme, "P").unwrap();
        assert_eq!(boundary_offset(&p, seq("AA IY").tokens()), 1);
    }

    #[test]
    fn labels_from_grouped_examples() {
        // T-(T,T,T)
        let r = seq("T");
        let d = seq("T T T");
        let gold = GoldAlignment { groups: vec![Some(Group { start: 0, end: 3, boundary: 2 })] };
        assert_eq!(gold_labels_from_alignment(&gold, &r, &d).unwrap(), labels(&[1], &[0, 0, 1]));
        // EH-(EH K)
        let r = seq("EH");
        let d = seq("EH K");
        let gold = GoldAlignment { groups: vec![Some(Group { start: 0, end: 2, boundary: 0 })] };
        assert_eq!(gold_labels_from_alignment(&gold, &r, &d).unwrap(), labels(&[1], &[1, 0]));
        // deleted token
        let r = seq("DH AH");
        let d = seq("AH");
        let gold = GoldAlignment { groups: vec![None, Some(Group { start: 0, end: 1, boundary: 0 })] };
        assert_eq!(gold_labels_from_alignment(&gold, &r, &d).unwrap(), labels(&[2, 1], &[1]));
    }

    #[test]
    fn malformed_gold_is_rejected() {
        let r = seq("P EH");
        let d = seq("P EH");
        let gap = GoldAlignment {
            groups: vec![Some(Group { start: 0, end: 1, boundary: 0 }), Some(Group { start: 2, end: 2, boundary: 1 })],
        };
        assert!(gold_labels_from_alignment(&gap, &r, &d).is_err());
        let short = GoldAlignment { groups: vec![Some(Group { start: 0, end: 2, boundary: 1 })] };
        assert!(matches!(
            gold_labels_from_alignment(&short, &r, &d),
            Err(AlignmentError::GroupCount { .. })
        ));
        let uncovered = GoldAlignment { groups: vec![Some(Group { start: 0, end: 1, boundary: 0 }), None] };
        assert!(matches!(
            gold_labels_from_alignment(&uncovered, &r, &d),
            Err(AlignmentError::Coverage { .. })
        ));
    }

    #[test]
    fn decoding_examples() {
        let r = seq("P EH N");
        let g = alignment_from_labels(&JointLabelEncoding::identity(3), &r, &r).unwrap();
        for (i, grp) in g.groups.iter().enumerate() {
            assert_eq!(*grp, Some(Group { start: i, end: i + 1, boundary: i }));
        }

        let d = seq("P P EH N");
        let g = alignment_from_labels(&labels(&[1, 1, 1], &[0, 1, 1, 1]), &r, &d).unwrap();
        assert_eq!(g.groups[0], Some(Group { start: 0, end: 2, boundary: 1 }));

        let g = alignment_from_labels(&labels(&[2, 1], &[1]), &seq("DH AH"), &seq("AH")).unwrap();
        assert_eq!(g.groups, vec![None, Some(Group { start: 0, end: 1, boundary: 0 })]);
    }

    #[test]
    fn zero_runs_split_between_neighbours() {
        // EH-(EH K) N-(N N): K trails EH, the extra N precedes its target.
        let r = seq("EH N");
        let d = seq("EH K N N");
        let g = alignment_from_labels(&labels(&[1, 1], &[1, 0, 0, 1]), &r, &d).unwrap();
        assert_eq!(g.groups[0], Some(Group { start: 0, end: 2, boundary: 0 }));
        assert_eq!(g.groups[1], Some(Group { start: 2, end: 4, boundary: 3 }));
        assert_eq!(g.pretty(&r, &d), "EH-(EH K) N-(N N)");
    }

    #[test]
    fn codec_errors() {
        let r = seq("P EH");
        assert!(matches!(
            alignment_from_labels(&labels(&[1, 1], &[1, 0]), &r, &r),
            Err(CodecError::CountMismatch { .. })
        ));
        assert!(matches!(
            alignment_from_labels(&labels(&[2, 2], &[0, 0]), &r, &r),
            Err(CodecError::Unanchored)
        ));
        assert!(matches!(
            alignment_from_labels(&labels(&[1, 3], &[1, 1]), &r, &r),
            Err(CodecError::InvalidLabel { .. })
        ));
        assert!(matches!(
            alignment_from_labels(&labels(&[1], &[1, 1]), &r, &r),
            Err(CodecError::Length { .. })
        ));
    }

    #[test]
    fn flat_serialization() {
        assert_eq!(serialize_flat(&labels(&[2, 1], &[1]), &seq("DH AH"), &seq("AH")), "2 1");
        let r = seq("P EH N");
        assert_eq!(serialize_flat(&JointLabelEncoding::identity(3), &r, &r), "1 1 1");
        assert_eq!(serialize_flat(&labels(&[1, 1, 1], &[0, 1, 1, 1]), &r, &seq("P P EH N")), "0 1 1 1");
        // trailing deletion lands after the last group
        assert_eq!(serialize_flat(&labels(&[1, 1, 2], &[1, 0, 1]), &r, &seq("P K EH")), "1 0 1 2");
        // inconsistent labels still serialize
        assert_eq!(serialize_flat(&labels(&[2, 1, 1], &[1]), &r, &seq("EH")), "2 1");
    }
}
