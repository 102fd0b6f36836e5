//! Alignment accuracy, dysfluency-type classification and the proportion
//! ablation driver.

mod ablation;
mod predictions;

pub use ablation::{run_ablation, AblationConfig, AblationGrid, AblationRow, AblationSpec};
pub use predictions::{predict_corpus, read_predictions, write_predictions, Aligner, PredictionRecord};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::phoneme::{Level, Similarity, TokenSequence};
use crate::simulator::{alignment_from_labels, CorpusRecord, DysfluencyType, GoldAlignment};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("record {0} has no prediction")]
    MissingPrediction(u64),
    #[error("prediction {0} has no gold record")]
    UnknownRecord(u64),
    #[error("duplicate prediction for record {0}")]
    Duplicate(u64),
    #[error("record {id}: prediction has {predicted} labels, gold has {gold}")]
    LabelCount { id: u64, predicted: usize, gold: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("prediction failed for record {id}: {message}")]
    Aligner { id: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentAccuracyReport {
    pub method: String,
    pub level: Option<Level>,
    pub sequence_exact_match: f64,
    pub token_label_accuracy: f64,
    pub n_records: usize,
}

impl AlignmentAccuracyReport {
    pub const CSV_HEADER: &'static str = "method,level,sequence_exact_match,token_label_accuracy,n_records";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{}",
            self.method,
            self.level.map(|l| l.to_string()).unwrap_or_default(),
            self.sequence_exact_match,
            self.token_label_accuracy,
            self.n_records
        )
    }
}

/// Pairs predictions with gold records by id; both sides must cover the
/// same ids.
fn pair_up<'a>(
    predictions: &'a [PredictionRecord],
    gold: &'a [CorpusRecord],
) -> Result<Vec<(&'a PredictionRecord, &'a CorpusRecord)>, EvalError> {
    let mut by_id: HashMap<u64, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.id, p).is_some() {
            return Err(EvalError::Duplicate(p.id));
        }
    }
    let gold_ids: BTreeSet<u64> = gold.iter().map(|g| g.id).collect();
    if let Some(p) = predictions.iter().find(|p| !gold_ids.contains(&p.id)) {
        return Err(EvalError::UnknownRecord(p.id));
    }
    gold.iter()
        .map(|g| {
            let p = by_id.get(&g.id).ok_or(EvalError::MissingPrediction(g.id))?;
            let (pl, gl) = (&p.labels, &g.labels);
            if pl.ref_labels.len() != gl.ref_labels.len() || pl.dys_labels.len() != gl.dys_labels.len() {
                return Err(EvalError::LabelCount { id: g.id, predicted: pl.len(), gold: gl.len() });
            }
            Ok((*p, g))
        })
        .collect()
}

pub fn alignment_accuracy(
    method: &str,
    predictions: &[PredictionRecord],
    gold: &[CorpusRecord],
) -> Result<AlignmentAccuracyReport, EvalError> {
    let pairs = pair_up(predictions, gold)?;
    let (mut exact, mut hit, mut total) = (0usize, 0usize, 0usize);
    for (p, g) in &pairs {
        exact += usize::from(p.labels == g.labels);
        let both = p.labels.ref_labels.iter().zip(&g.labels.ref_labels);
        let both = both.chain(p.labels.dys_labels.iter().zip(&g.labels.dys_labels));
        for (a, b) in both {
            hit += usize::from(a == b);
            total += 1;
        }
    }
    let levels: BTreeSet<Level> = gold.iter().map(|g| g.level).collect();
    let n = pairs.len();
    Ok(AlignmentAccuracyReport {
        method: method.to_string(),
        level: if levels.len() == 1 { levels.into_iter().next() } else { None },
        sequence_exact_match: if n == 0 { 0.0 } else { exact as f64 / n as f64 },
        token_label_accuracy: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
        n_records: n,
    })
}

/// Dysfluency kinds implied by a grouping: an empty group is a deletion, a
/// boundary that differs from its reference token a substitution, and any
/// other group member a repetition when it matches the reference token
/// (exactly or by category) or an insertion when it does not.
pub fn classify_types(
    alignment: &GoldAlignment,
    reference: &TokenSequence,
    dysfluent: &TokenSequence,
) -> BTreeSet<DysfluencyType> {
    let mut kinds = BTreeSet::new();
    for (i, group) in alignment.groups.iter().enumerate() {
        let Some(g) = group else {
            kinds.insert(DysfluencyType::Deletion);
            continue;
        };
        let target = &reference[i];
        if target.similarity(&dysfluent[g.boundary]) != Similarity::Exact {
            kinds.insert(DysfluencyType::Substitution);
        }
        for j in g.indices().filter(|&j| j != g.boundary) {
            kinds.insert(match target.similarity(&dysfluent[j]) {
                Similarity::Dissimilar => DysfluencyType::Insertion,
                _ => DysfluencyType::Repetition,
            });
        }
    }
    kinds
}

/// Column of the type-specific grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TypeBucket {
    Rep,
    Ins,
    Del,
    Sub,
    Mix,
}

impl TypeBucket {
    pub const ALL: [TypeBucket; 5] = [TypeBucket::Rep, TypeBucket::Ins, TypeBucket::Del, TypeBucket::Sub, TypeBucket::Mix];

    /// Bucket of an injected kind set; `None` for records without events.
    pub fn of(kinds: &BTreeSet<DysfluencyType>) -> Option<TypeBucket> {
        match kinds.len() {
            0 => None,
            1 => Some(match kinds.iter().next().expect("one kind") {
                DysfluencyType::Repetition => TypeBucket::Rep,
                DysfluencyType::Insertion => TypeBucket::Ins,
                DysfluencyType::Deletion => TypeBucket::Del,
                DysfluencyType::Substitution => TypeBucket::Sub,
            }),
            _ => Some(TypeBucket::Mix),
        }
    }
}

impl fmt::Display for TypeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TypeCell {
    pub correct: usize,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TypeReport {
    pub cells: BTreeMap<TypeBucket, TypeCell>,
    /// Gold records without injected events.
    pub skipped: usize,
}

impl TypeReport {
    pub fn accuracy(&self, bucket: TypeBucket) -> f64 {
        self.cells.get(&bucket).map_or(0.0, |c| c.accuracy)
    }
}

/// Kinds implied by predicted labels; labels that cannot be decoded into a
/// grouping yield `None`.
pub fn predicted_kinds(prediction: &PredictionRecord, gold: &CorpusRecord) -> Option<BTreeSet<DysfluencyType>> {
    alignment_from_labels(&prediction.labels, &gold.reference, &gold.dysfluent)
        .ok()
        .map(|a| classify_types(&a, &gold.reference, &gold.dysfluent))
}

/// A record counts as correct when the kinds read off its predicted
/// grouping equal the injected kinds.
pub fn type_specific_accuracy(predictions: &[PredictionRecord], gold: &[CorpusRecord]) -> Result<TypeReport, EvalError> {
    let pairs = pair_up(predictions, gold)?;
    let mut report = TypeReport::default();
    for bucket in TypeBucket::ALL {
        report.cells.insert(bucket, TypeCell::default());
    }
    for (p, g) in pairs {
        let injected = g.kinds();
        let Some(bucket) = TypeBucket::of(&injected) else {
            report.skipped += 1;
            continue;
        };
        let cell = report.cells.get_mut(&bucket).expect("all buckets present");
        cell.n += 1;
        cell.correct += usize::from(predicted_kinds(p, g).as_ref() == Some(&injected));
    }
    for cell in report.cells.values_mut() {
        cell.accuracy = if cell.n == 0 { 0.0 } else { cell.correct as f64 / cell.n as f64 };
    }
    Ok(report)
}
