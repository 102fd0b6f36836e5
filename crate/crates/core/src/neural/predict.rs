use serde::Serialize;

use super::model::NeuralAligner;
use super::ModelError;
use crate::phoneme::TokenSequence;
use crate::scalar::Scalar;
use crate::simulator::{JointLabelEncoding, LABEL_BOUNDARY, LABEL_DYSFLUENT, LABEL_MISSING};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// Labels after count repair.
    pub labels: JointLabelEncoding,
    /// Per-position argmax before repair.
    pub raw_labels: JointLabelEncoding,
    pub ref_probs: Vec<[f64; 3]>,
    pub dys_probs: Vec<[f64; 3]>,
}

impl Prediction {
    pub fn was_repaired(&self) -> bool {
        self.labels != self.raw_labels
    }
}

/// `preferred` wins ties.
fn argmax(p: &[f64; 3], [preferred, other]: [usize; 2]) -> u8 {
    (if p[other] > p[preferred] { other } else { preferred }) as u8
}

pub fn predict_labels<F: Scalar>(
    model: &NeuralAligner<F>,
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
) -> Result<Prediction, ModelError> {
    let probs = model.probabilities(reference, dysfluent)?;
    let row = |i: usize| [probs[(i, 0)].as_f64(), probs[(i, 1)].as_f64(), probs[(i, 2)].as_f64()];
    let n = reference.len();
    let ref_probs: Vec<[f64; 3]> = (0..n).map(row).collect();
    let dys_probs: Vec<[f64; 3]> = (0..dysfluent.len()).map(|j| row(n + 1 + j)).collect();
    let raw_labels = JointLabelEncoding {
        ref_labels: ref_probs.iter().map(|p| argmax(p, [1, 2])).collect(),
        dys_labels: dys_probs.iter().map(|p| argmax(p, [1, 0])).collect(),
    };
    let labels = repair_labels(&raw_labels, &ref_probs, &dys_probs);
    Ok(Prediction { labels, raw_labels, ref_probs, dys_probs })
}

/// Makes the number of surviving reference tokens equal the number of
/// dysfluent boundaries by flipping 1s on the side that has too many,
/// least confident first. Confidence is `p(1)` minus the probability of the
/// side's other class.
pub fn repair_labels(raw: &JointLabelEncoding, ref_probs: &[[f64; 3]], dys_probs: &[[f64; 3]]) -> JointLabelEncoding {
    let mut out = raw.clone();
    let ref_ones = out.surviving_count();
    let dys_ones = out.boundary_count();
    let (labels, probs, other, excess) = if dys_ones > ref_ones {
        (&mut out.dys_labels, dys_probs, LABEL_DYSFLUENT, dys_ones - ref_ones)
    } else if ref_ones > dys_ones {
        (&mut out.ref_labels, ref_probs, LABEL_MISSING, ref_ones - dys_ones)
    } else {
        return out;
    };
    let mut candidates: Vec<(f64, usize)> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == LABEL_BOUNDARY)
        .map(|(i, _)| {
            let p = probs.get(i).copied().unwrap_or([0.0; 3]);
            (p[1] - p[other as usize], i)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in candidates.iter().take(excess) {
        labels[i] = other;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(r: &[u8], d: &[u8]) -> JointLabelEncoding {
        JointLabelEncoding { ref_labels: r.to_vec(), dys_labels: d.to_vec() }
    }

    #[test]
    fn consistent_input_is_unchanged() {
        let raw = enc(&[1, 2, 1], &[1, 0, 1]);
        assert_eq!(repair_labels(&raw, &[[0.0; 3]; 3], &[[0.0; 3]; 3]), raw);
    }

    #[test]
    fn least_confident_extra_boundary_is_dropped() {
        let raw = enc(&[1, 1], &[1, 1, 1]);
        let dys = [[0.3, 0.7, 0.0], [0.495, 0.505, 0.0], [0.2, 0.8, 0.0]];
        let fixed = repair_labels(&raw, &[[0.0, 0.9, 0.1]; 2], &dys);
        assert_eq!(fixed, enc(&[1, 1], &[1, 0, 1]));
    }

    #[test]
    fn all_missing_reference_drops_every_boundary() {
        let raw = enc(&[2, 2], &[1, 0, 1]);
        let fixed = repair_labels(&raw, &[[0.0, 0.2, 0.8]; 2], &[[0.4, 0.6, 0.0]; 3]);
        assert_eq!(fixed, enc(&[2, 2], &[0, 0, 0]));
        assert!(fixed.is_consistent());
    }

    #[test]
    fn extra_reference_tokens_become_missing() {
        let raw = enc(&[1, 1, 1], &[1]);
        let r = [[0.0, 0.9, 0.1], [0.0, 0.55, 0.45], [0.0, 0.6, 0.4]];
        let fixed = repair_labels(&raw, &r, &[[0.1, 0.9, 0.0]]);
        assert_eq!(fixed, enc(&[1, 2, 2], &[1]));
    }

    #[test]
    fn ties_prefer_the_boundary_class() {
        assert_eq!(argmax(&[0.5, 0.5, 0.0], [1, 0]), 1);
        assert_eq!(argmax(&[0.0, 0.5, 0.5], [1, 2]), 1);
        assert_eq!(argmax(&[0.0, 0.4, 0.6], [1, 2]), 2);
    }
}
