use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{ctc_greedy_decode, synthesize_emissions, DurationModel, EmissionMatrix, EmissionNoise, FrameSpan, StaError};
use crate::align::ClassicMethod;
use crate::neural::ModelCheckpoint;
use crate::phoneme::TokenSequence;
use crate::simulator::{
    alignment_from_labels, record_seed, CorpusRecord, DysfluencyEvent, DysfluencyType, GoldAlignment,
    JointLabelEncoding,
};

/// Aligner used to map decoded tokens onto the reference.
#[derive(Debug, Clone, Copy)]
pub enum StaAligner<'a> {
    Neural(&'a ModelCheckpoint),
    Soft,
    Hard,
}

impl StaAligner<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            StaAligner::Neural(_) => "neural",
            StaAligner::Soft => "soft",
            StaAligner::Hard => "hard",
        }
    }

    fn labels(&self, reference: &TokenSequence, decoded: &TokenSequence) -> Result<JointLabelEncoding, StaError> {
        let classic = |m: ClassicMethod| {
            m.align(reference, decoded).map(|r| r.labels).map_err(|e| StaError::Aligner(e.to_string()))
        };
        match self {
            StaAligner::Neural(ckpt) => {
                ckpt.predict(reference, decoded).map(|p| p.labels).map_err(|e| StaError::Aligner(e.to_string()))
            }
            StaAligner::Soft => classic(ClassicMethod::Soft),
            StaAligner::Hard => classic(ClassicMethod::Hard),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenTiming {
    Span { start_ms: f64, end_ms: f64 },
    /// No frames; `anchor_ms` is where the token would have been.
    Missing { anchor_ms: f64 },
}

impl TokenTiming {
    pub fn endpoints(&self) -> (f64, f64) {
        match *self {
            TokenTiming::Span { start_ms, end_ms } => (start_ms, end_ms),
            TokenTiming::Missing { anchor_ms } => (anchor_ms, anchor_ms),
        }
    }
}

/// Timing of every reference token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    pub timings: Vec<TokenTiming>,
    /// Grouping of decoded tokens the timings were projected from, if any.
    #[serde(skip)]
    pub alignment: Option<GoldAlignment>,
}

/// Unions each group's frame spans; deleted tokens are anchored at the end
/// of the previous non-missing group, or at 0.
fn project(alignment: &GoldAlignment, spans: &[FrameSpan], frame_ms: f64) -> Vec<TokenTiming> {
    let mut anchor = 0.0;
    alignment
        .groups
        .iter()
        .map(|g| match g {
            Some(g) => {
                let start_ms = spans[g.start].start_frame as f64 * frame_ms;
                let end_ms = spans[g.end - 1].end_frame as f64 * frame_ms;
                anchor = end_ms;
                TokenTiming::Span { start_ms, end_ms }
            }
            None => TokenTiming::Missing { anchor_ms: anchor },
        })
        .collect()
}

fn all_missing(n: usize) -> Segmentation {
    Segmentation { timings: vec![TokenTiming::Missing { anchor_ms: 0.0 }; n], alignment: None }
}

/// Timeline of the reference under the simulator's gold grouping.
pub fn gold_segmentation(gold: &GoldAlignment, spans: &[FrameSpan], frame_ms: f64) -> Segmentation {
    Segmentation { timings: project(gold, spans, frame_ms), alignment: Some(gold.clone()) }
}

pub fn segment(
    reference: &TokenSequence,
    emissions: &EmissionMatrix,
    aligner: StaAligner<'_>,
) -> Result<Segmentation, StaError> {
    if reference.is_empty() {
        return Err(StaError::InvalidMatrix("reference is empty".into()));
    }
    let (decoded, spans) = ctc_greedy_decode(emissions);
    if decoded.is_empty() {
        return Ok(all_missing(reference.len()));
    }
    let labels = aligner.labels(reference, &decoded)?;
    match alignment_from_labels(&labels, reference, &decoded) {
        Ok(alignment) => Ok(Segmentation {
            timings: project(&alignment, &spans, emissions.frame_ms),
            alignment: Some(alignment),
        }),
        // Nothing to anchor the decoded tokens to.
        Err(_) => Ok(all_missing(reference.len())),
    }
}

/// Squared endpoint errors of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordBoundaryError {
    pub sum_sq_ms2: f64,
    pub endpoints: usize,
}

/// Compares start and end of every reference token touched by an event
/// (of kind `scope`, or any kind). `None` when no token is in scope.
pub fn boundary_loss(
    pred: &Segmentation,
    gold: &Segmentation,
    events: &[DysfluencyEvent],
    scope: Option<DysfluencyType>,
) -> Option<RecordBoundaryError> {
    let touched: BTreeSet<usize> = events
        .iter()
        .filter(|e| scope.is_none_or(|k| e.kind == k))
        .map(|e| e.ref_index)
        .filter(|&i| i < pred.timings.len() && i < gold.timings.len())
        .collect();
    if touched.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &i in &touched {
        let (ps, pe) = pred.timings[i].endpoints();
        let (gs, ge) = gold.timings[i].endpoints();
        sum += (ps - gs).powi(2) + (pe - ge).powi(2);
    }
    Some(RecordBoundaryError { sum_sq_ms2: sum, endpoints: 2 * touched.len() })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundaryLoss {
    pub mse_ms2: f64,
    pub rmse_ms: f64,
    pub endpoints: usize,
    /// Records with at least one token in scope.
    pub records: usize,
    /// Records without any token in scope.
    pub excluded: usize,
}

impl BoundaryLoss {
    fn add(&mut self, err: Option<RecordBoundaryError>) {
        match err {
            Some(e) => {
                self.mse_ms2 += e.sum_sq_ms2;
                self.endpoints += e.endpoints;
                self.records += 1;
            }
            None => self.excluded += 1,
        }
    }

    fn finish(&mut self) {
        if self.endpoints > 0 {
            self.mse_ms2 /= self.endpoints as f64;
        }
        self.rmse_ms = self.mse_ms2.sqrt();
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundaryLossReport {
    pub overall: BoundaryLoss,
    pub per_kind: BTreeMap<DysfluencyType, BoundaryLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaReport {
    pub aligner: String,
    pub epsilon: f64,
    pub records: usize,
    /// Records whose decoded sequence equals the dysfluent sequence.
    pub decode_exact: usize,
    /// Records whose predicted grouping equals the gold grouping.
    pub recovered: usize,
    pub recovery_rate: f64,
    /// Boundary loss over every record.
    pub boundary: BoundaryLossReport,
    /// Boundary loss over recovered records only.
    pub boundary_recovered: BoundaryLossReport,
}

/// Synthesizes emissions for every record (seeded per record id), segments
/// them and scores boundaries against the gold timeline.
pub fn run_sta(
    records: &[CorpusRecord],
    durations: &DurationModel,
    noise: &EmissionNoise,
    aligner: StaAligner<'_>,
) -> Result<StaReport, StaError> {
    noise.validate()?;
    let mut boundary = BoundaryLossReport::default();
    let mut boundary_recovered = BoundaryLossReport::default();
    let (mut decode_exact, mut recovered) = (0, 0);
    for record in records {
        let rec_noise = EmissionNoise { seed: record_seed(noise.seed, record.id), ..noise.clone() };
        let (emissions, spans) = synthesize_emissions(&record.dysfluent, durations, &rec_noise)?;
        let (decoded, _) = ctc_greedy_decode(&emissions);
        let exact = decoded == record.dysfluent;
        decode_exact += usize::from(exact);
        let pred = segment(&record.reference, &emissions, aligner)?;
        let gold = gold_segmentation(&record.gold, &spans, emissions.frame_ms);
        let hit = exact && pred.alignment.as_ref() == Some(&record.gold);
        recovered += usize::from(hit);

        let mut targets = vec![&mut boundary];
        if hit {
            targets.push(&mut boundary_recovered);
        }
        for report in targets {
            report.overall.add(boundary_loss(&pred, &gold, &record.events, None));
            for kind in DysfluencyType::ALL {
                report.per_kind.entry(kind).or_default().add(boundary_loss(&pred, &gold, &record.events, Some(kind)));
            }
        }
    }
    for report in [&mut boundary, &mut boundary_recovered] {
        report.overall.finish();
        report.per_kind.values_mut().for_each(BoundaryLoss::finish);
    }
    Ok(StaReport {
        aligner: aligner.name().into(),
        epsilon: noise.epsilon,
        records: records.len(),
        decode_exact,
        recovered,
        recovery_rate: if records.is_empty() { 0.0 } else { recovered as f64 / records.len() as f64 },
        boundary,
        boundary_recovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;
    use crate::simulator::{inject, Group, SimulationConfig};

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    fn span(token: &str, start: usize, end: usize) -> FrameSpan {
        FrameSpan { token: crate::phoneme::Token::parse(Level::Phoneme, token).unwrap(), start_frame: start, end_frame: end }
    }

    #[test]
    fn identity_record_segments_exactly() {
        let reference = seq("P EH N");
        let noise = EmissionNoise { seed: 4, ..EmissionNoise::default() };
        let (e, spans) = synthesize_emissions(&reference, &DurationModel::default(), &noise).unwrap();
        let pred = segment(&reference, &e, StaAligner::Hard).unwrap();
        for (timing, s) in pred.timings.iter().zip(&spans) {
            assert_eq!(timing.endpoints(), (s.start_frame as f64 * 20.0, s.end_frame as f64 * 20.0));
        }
    }

    #[test]
    fn repetition_frames_merge_into_the_target() {
        let gold = GoldAlignment {
            groups: vec![Some(Group { start: 0, end: 2, boundary: 1 }), Some(Group { start: 2, end: 3, boundary: 2 })],
        };
        let spans = [span("P", 0, 4), span("P", 5, 9), span("EH", 10, 15)];
        let seg = gold_segmentation(&gold, &spans, 20.0);
        assert_eq!(seg.timings[0], TokenTiming::Span { start_ms: 0.0, end_ms: 180.0 });
        assert_eq!(seg.timings[1], TokenTiming::Span { start_ms: 200.0, end_ms: 300.0 });
    }

    #[test]
    fn deleted_token_is_anchored_after_its_predecessor() {
        let gold = GoldAlignment {
            groups: vec![Some(Group { start: 0, end: 1, boundary: 0 }), None, Some(Group { start: 1, end: 2, boundary: 1 })],
        };
        let seg = gold_segmentation(&gold, &[span("P", 0, 4), span("N", 5, 8)], 20.0);
        assert_eq!(seg.timings[1], TokenTiming::Missing { anchor_ms: 80.0 });
        let first = GoldAlignment { groups: vec![None, Some(Group { start: 0, end: 1, boundary: 0 })] };
        let seg = gold_segmentation(&first, &[span("AH", 0, 4)], 20.0);
        assert_eq!(seg.timings[0], TokenTiming::Missing { anchor_ms: 0.0 });
    }

    #[test]
    fn one_frame_shift_costs_twenty_ms() {
        let gold = Segmentation { timings: vec![TokenTiming::Span { start_ms: 100.0, end_ms: 200.0 }], alignment: None };
        let pred = Segmentation { timings: vec![TokenTiming::Span { start_ms: 120.0, end_ms: 220.0 }], alignment: None };
        let event = DysfluencyEvent {
            kind: DysfluencyType::Repetition,
            ref_index: 0,
            inserted_tokens: vec![],
            detail: String::new(),
        };
        let err = boundary_loss(&pred, &gold, std::slice::from_ref(&event), None).unwrap();
        assert_eq!(err, RecordBoundaryError { sum_sq_ms2: 800.0, endpoints: 2 });
        assert!(boundary_loss(&pred, &gold, &[event], Some(DysfluencyType::Deletion)).is_none());
        assert_eq!(boundary_loss(&gold, &gold, &[], None), None);
    }

    #[test]
    fn soft_aligner_recovers_clean_records() {
        let texts = ["AH P EH N AA N DH AH T EY B AH L", "DH AH K AE T S AE T", "S IY DH AH B IH G D AO G"];
        let records: Vec<CorpusRecord> = (0..30u64)
            .map(|id| {
                let cfg = SimulationConfig { seed: id, ..SimulationConfig::default() };
                let mut r = inject(&seq(texts[id as usize % 3]), &cfg).unwrap();
                r.id = id;
                r
            })
            .collect();
        let report = run_sta(&records, &DurationModel::default(), &EmissionNoise::default(), StaAligner::Soft).unwrap();
        assert_eq!(report.decode_exact, records.len());
        assert!(report.recovered > 20, "{report:?}");
        assert_eq!(report.boundary_recovered.overall.mse_ms2, 0.0);
    }

    #[test]
    fn empty_decode_is_all_missing() {
        let blank = ndarray::Array2::from_shape_fn((3, super::super::NUM_EMISSION_CLASSES), |(_, c)| if c == 0 { 1.0 } else { 0.0 });
        let e = EmissionMatrix::new(blank, 20.0).unwrap();
        let seg = segment(&seq("P EH"), &e, StaAligner::Soft).unwrap();
        assert!(seg.timings.iter().all(|t| matches!(t, TokenTiming::Missing { anchor_ms } if *anchor_ms == 0.0)));
    }
}
