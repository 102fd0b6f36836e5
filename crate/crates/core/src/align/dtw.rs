use serde::{Deserialize, Serialize};

use super::{check_pair, AlignError, AlignmentResult};
use crate::phoneme::{Similarity, TokenSequence};

/// Symbolic token distances for DTW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwCosts {
    pub exact: f64,
    pub similar: f64,
    pub dissimilar: f64,
}

impl Default for DtwCosts {
    fn default() -> Self {
        DtwCosts { exact: 0.0, similar: 0.5, dissimilar: 1.0 }
    }
}

impl DtwCosts {
    /// Ignores categories: anything but equality costs 1.
    pub fn plain() -> Self {
        DtwCosts { exact: 0.0, similar: 1.0, dissimilar: 1.0 }
    }

    fn of(&self, s: Similarity) -> f64 {
        match s {
            Similarity::Exact => self.exact,
            Similarity::Similar => self.similar,
            Similarity::Dissimilar => self.dissimilar,
        }
    }
}

/// DTW with category-aware costs.
pub fn dtw_align(reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<AlignmentResult, AlignError> {
    dtw_align_with(reference, dysfluent, &DtwCosts::default())
}

pub fn dtw_align_with(
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
    costs: &DtwCosts,
) -> Result<AlignmentResult, AlignError> {
    check_pair(reference, dysfluent)?;
    let path = warping_path(reference, dysfluent, costs);
    let (n, m) = (reference.len(), dysfluent.len());

    // Row-wise boundary choice: last exact, else last similar, else last cell,
    // restricted to columns after the previous boundary.
    let mut pairs = Vec::with_capacity(n);
    let mut last: Option<usize> = None;
    let mut cursor = 0;
    for i in 0..n {
        let mut row = Vec::new();
        while cursor < path.cells.len() && path.cells[cursor].0 == i {
            row.push(path.cells[cursor].1);
            cursor += 1;
        }
        let candidates: Vec<usize> = row.into_iter().filter(|&j| last.is_none_or(|l| j > l)).collect();
        if candidates.is_empty() {
            continue;
        }
        let pick = |s: Similarity| {
            candidates
                .iter()
                .rev()
                .copied()
                .find(|&j| reference[i].similarity(&dysfluent[j]) == s)
        };
        let j = pick(Similarity::Exact)
            .or_else(|| pick(Similarity::Similar))
            .unwrap_or(*candidates.last().expect("non-empty"));
        pairs.push((i, j));
        last = Some(j);
    }
    Ok(AlignmentResult::from_pairs(pairs, n, m, path.cost))
}

pub(crate) struct WarpingPath {
    pub cost: f64,
    /// `(ref, dys)` cells in path order.
    pub cells: Vec<(usize, usize)>,
}

pub(crate) fn warping_path(reference: &TokenSequence, dysfluent: &TokenSequence, costs: &DtwCosts) -> WarpingPath {
    let (n, m) = (reference.len(), dysfluent.len());
    let width = m + 1;
    let mut acc = vec![f64::INFINITY; (n + 1) * width];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let d = costs.of(reference[i - 1].similarity(&dysfluent[j - 1]));
            let prev = acc[(i - 1) * width + j - 1]
                .min(acc[(i - 1) * width + j])
                .min(acc[i * width + j - 1]);
            acc[i * width + j] = d + prev;
        }
    }
    let mut cells = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n, m);
    while i > 1 || j > 1 {
        let diag = if i > 1 && j > 1 { acc[(i - 1) * width + j - 1] } else { f64::INFINITY };
        let left = if j > 1 { acc[i * width + j - 1] } else { f64::INFINITY };
        let up = if i > 1 { acc[(i - 1) * width + j] } else { f64::INFINITY };
        if diag <= left && diag <= up {
            i -= 1;
            j -= 1;
        } else if left <= up {
            j -= 1;
        } else {
            i -= 1;
        }
        cells.push((i - 1, j - 1));
    }
    cells.reverse();
    WarpingPath { cost: acc[n * width + m], cells }
}
