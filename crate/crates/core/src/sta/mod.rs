//! Speech-text alignment on synthetic CTC emissions: synthesize frame
//! posteriors for a dysfluent sequence, greedy-decode them, align the decoded
//! tokens to the reference and project the reference onto the timeline.

mod container;
mod segment;

pub use container::{read_emissions, read_sidecar, write_emissions, write_sidecar, EmissionError, GoldSidecar};
pub use segment::{
    boundary_loss, gold_segmentation, run_sta, segment, BoundaryLoss, BoundaryLossReport, RecordBoundaryError,
    Segmentation, StaAligner, StaReport, TokenTiming,
};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phoneme::{Level, Phoneme, Token, TokenSequence};

/// Phoneme classes plus blank.
pub const NUM_EMISSION_CLASSES: usize = 40;
pub const BLANK: usize = 0;
pub const DEFAULT_FRAME_MS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StaError {
    #[error("emissions need phoneme-level input, got {0}")]
    NotPhonemes(Level),
    #[error("invalid emission matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid noise settings: {0}")]
    InvalidNoise(String),
    #[error("aligner failed: {0}")]
    Aligner(String),
}

/// Row-stochastic frame posteriors; column 0 is blank, column `i + 1` is
/// phoneme `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    pub frames: Array2<f64>,
    pub frame_ms: f64,
}

impl EmissionMatrix {
    pub fn new(frames: Array2<f64>, frame_ms: f64) -> Result<Self, StaError> {
        if frames.nrows() == 0 || frames.ncols() != NUM_EMISSION_CLASSES {
            return Err(StaError::InvalidMatrix(format!(
                "expected T >= 1 rows of {NUM_EMISSION_CLASSES} classes, got {:?}",
                frames.dim()
            )));
        }
        if !(frame_ms > 0.0) {
            return Err(StaError::InvalidMatrix("frame length must be positive".into()));
        }
        if let Some(t) = frames.rows().into_iter().position(|r| {
            r.iter().any(|v| !v.is_finite() || *v < 0.0) || (r.sum() - 1.0).abs() > 1e-6
        }) {
            return Err(StaError::InvalidMatrix(format!("frame {t} is not a distribution")));
        }
        Ok(EmissionMatrix { frames, frame_ms })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// Per-frame argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.frames
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// A token occupying frames `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub token: Token,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationModel {
    pub median_frames: f64,
    pub sigma: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub trailing_blank: usize,
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel { median_frames: 5.0, sigma: 0.4, min_frames: 2, max_frames: 20, trailing_blank: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionNoise {
    /// Probability mass moved off the true class.
    pub epsilon: f64,
    /// Share of that mass given to phonemes of the true phoneme's category.
    pub confusion_bias: f64,
    pub seed: u64,
}

impl Default for EmissionNoise {
    fn default() -> Self {
        EmissionNoise { epsilon: 0.0, confusion_bias: 0.5, seed: 0 }
    }
}

impl EmissionNoise {
    pub fn validate(&self) -> Result<(), StaError> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(StaError::InvalidNoise(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.confusion_bias) {
            return Err(StaError::InvalidNoise(format!("confusion bias {} outside [0, 1]", self.confusion_bias)));
        }
        Ok(())
    }
}

fn class_of(p: Phoneme) -> usize {
    p.index() + 1
}

fn phoneme_of(class: usize) -> Option<Phoneme> {
    class.checked_sub(1).and_then(Phoneme::from_index)
}

/// Frame posteriors for `dysfluent` and the gold span of every token.
///
/// Durations are drawn before any noise, so the gold spans depend on the
/// seed and duration model only.
pub fn synthesize_emissions(
    dysfluent: &TokenSequence,
    durations: &DurationModel,
    noise: &EmissionNoise,
) -> Result<(EmissionMatrix, Vec<FrameSpan>), StaError> {
    if dysfluent.level() != Level::Phoneme {
        return Err(StaError::NotPhonemes(dysfluent.level()));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let lengths = LogNormal::new(durations.median_frames.ln(), durations.sigma)
        .map_err(|e| StaError::InvalidNoise(e.to_string()))?;
    let (lo, hi) = (durations.min_frames.max(1), durations.max_frames.max(durations.min_frames.max(1)));

    let mut truth = Vec::new();
    let mut spans = Vec::with_capacity(dysfluent.len());
    for token in dysfluent.iter() {
        let phoneme = token.as_phoneme().expect("phoneme level");
        let frames = (lengths.sample(&mut rng).round() as usize).clamp(lo, hi);
        spans.push(FrameSpan { token: token.clone(), start_frame: truth.len(), end_frame: truth.len() + frames });
        truth.extend(std::iter::repeat_n(class_of(phoneme), frames));
        truth.extend(std::iter::repeat_n(BLANK, durations.trailing_blank));
    }
    if truth.is_empty() {
        truth.push(BLANK);
    }

    let eps = noise.epsilon;
    let mut frames = Array2::<f64>::zeros((truth.len(), NUM_EMISSION_CLASSES));
    for (t, &c) in truth.iter().enumerate() {
        let mut row = frames.row_mut(t);
        row[c] = 1.0 - eps;
        if eps == 0.0 {
            continue;
        }
        let related: Vec<usize> = match phoneme_of(c) {
            Some(p) => p.category().members().filter(|&q| q != p).map(class_of).collect(),
            None => Vec::new(),
        };
        let biased = if related.is_empty() { 0.0 } else { eps * noise.confusion_bias };
        if biased > 0.0 {
            let weights: Vec<f64> = related.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            for (&k, w) in related.iter().zip(&weights) {
                row[k] += biased * w / total;
            }
        }
        let spread = (eps - biased) / (NUM_EMISSION_CLASSES - 1) as f64;
        for k in (0..NUM_EMISSION_CLASSES).filter(|&k| k != c) {
            row[k] += spread;
        }
    }
    Ok((EmissionMatrix { frames, frame_ms: DEFAULT_FRAME_MS }, spans))
}

/// Greedy CTC decoding: argmax per frame, merge runs, drop blanks. Every
/// non-blank run becomes one token spanning that run.
pub fn ctc_greedy_decode(emissions: &EmissionMatrix) -> (TokenSequence, Vec<FrameSpan>) {
    let best = emissions.argmax();
    let mut spans: Vec<FrameSpan> = Vec::new();
    let mut t = 0;
    while t < best.len() {
        let class = best[t];
        let start = t;
        while t < best.len() && best[t] == class {
            t += 1;
        }
        if let Some(p) = phoneme_of(class) {
            spans.push(FrameSpan { token: Token::Phoneme(p), start_frame: start, end_frame: t });
        }
    }
    let tokens = spans.iter().map(|s| s.token.clone()).collect();
    let seq = TokenSequence::new(Level::Phoneme, tokens).expect("phoneme tokens");
    (seq, spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    fn from_classes(classes: &[usize]) -> EmissionMatrix {
        let mut frames = Array2::zeros((classes.len(), NUM_EMISSION_CLASSES));
        for (t, &c) in classes.iter().enumerate() {
            frames[(t, c)] = 1.0;
        }
        EmissionMatrix::new(frames, DEFAULT_FRAME_MS).unwrap()
    }

    fn cls(s: &str) -> usize {
        class_of(Phoneme::parse(s).unwrap())
    }

    #[test]
    fn decode_examples() {
        let (p, eh, n) = (cls("P"), cls("EH"), cls("N"));
        let (tokens, spans) = ctc_greedy_decode(&from_classes(&[BLANK, p, p, BLANK, eh, eh, n]));
        assert_eq!(tokens, seq("P EH N"));
        let ranges: Vec<_> = spans.iter().map(|s| (s.start_frame, s.end_frame)).collect();
        assert_eq!(ranges, vec![(1, 3), (4, 6), (6, 7)]);

        let (tokens, spans) = ctc_greedy_decode(&from_classes(&[p, p, p]));
        assert_eq!(tokens, seq("P"));
        assert_eq!((spans[0].start_frame, spans[0].end_frame), (0, 3));

        assert_eq!(ctc_greedy_decode(&from_classes(&[p, BLANK, p])).0, seq("P P"));
        assert!(ctc_greedy_decode(&from_classes(&[BLANK, BLANK])).0.is_empty());
    }

    #[test]
    fn noiseless_emissions_decode_exactly() {
        let dys = seq("P P EH N K AH");
        let (e, gold) = synthesize_emissions(&dys, &DurationModel::default(), &EmissionNoise::default()).unwrap();
        let (tokens, spans) = ctc_greedy_decode(&e);
        assert_eq!(tokens, dys);
        assert_eq!(spans, gold);
        for s in &gold {
            let len = s.end_frame - s.start_frame;
            assert!((2..=20).contains(&len));
        }
    }

    #[test]
    fn noisy_rows_are_distributions_and_seeded() {
        let dys = seq("AH B K");
        let noise = EmissionNoise { epsilon: 0.3, confusion_bias: 0.7, seed: 9 };
        let (a, spans_a) = synthesize_emissions(&dys, &DurationModel::default(), &noise).unwrap();
        let (b, _) = synthesize_emissions(&dys, &DurationModel::default(), &noise).unwrap();
        assert_eq!(a, b);
        for row in a.frames.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        // Same-category phonemes receive the biased share on top of the uniform one.
        let t = spans_a[0].start_frame;
        let ah = Phoneme::parse("AH").unwrap();
        let related: f64 = ah.category().members().filter(|&q| q != ah).map(|q| a.frames[(t, class_of(q))]).sum();
        let others = (NUM_EMISSION_CLASSES - 1) as f64;
        let expected = 0.3 * 0.7 + 0.3 * 0.3 * (ah.category().members().count() - 1) as f64 / others;
        assert!((related - expected).abs() < 1e-9);
        let clean = EmissionNoise { seed: 9, ..EmissionNoise::default() };
        assert_eq!(synthesize_emissions(&dys, &DurationModel::default(), &clean).unwrap().1, spans_a);
    }

    #[test]
    fn word_level_is_rejected() {
        let words = TokenSequence::parse(Level::Word, "a pen").unwrap();
        assert!(synthesize_emissions(&words, &DurationModel::default(), &EmissionNoise::default()).is_err());
    }
}
