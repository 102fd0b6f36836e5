//! Central finite differences against the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, FocalLossConfig};
use super::loss::focal_loss;
use super::model::NeuralAligner;
use super::tokenizer::{EncodedSeq, TokenizerSpec};
use crate::lexicon::Lexicon;
use crate::phoneme::{Level, Phoneme, Token, TokenSequence};

const STEP: f64 = 1e-4;
/// Gradients smaller than this in both estimates are compared absolutely.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed sign within the step.
    pub kinks: usize,
    pub grad_norm: f64,
}

impl GradCheckReport {
    fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.grad_norm = self.grad_norm.hypot(other.grad_norm);
    }
}

/// Checks every parameter of `model` on one batch.
pub fn grad_check_pair(
    model: &mut NeuralAligner<f64>,
    batch: &[(EncodedSeq, EncodedSeq)],
    targets: &[Option<u8>],
    loss_cfg: &FocalLossConfig,
) -> GradCheckReport {
    let fwd = model.forward(batch);
    let base_pattern = fwd.relu_pattern();
    let analytic = model.backward(&fwd, &focal_loss(&fwd.probs, targets, loss_cfg).dlogits);
    let eval = |m: &NeuralAligner<f64>| {
        let f = m.forward(batch);
        (focal_loss(&f.probs, targets, loss_cfg).loss, f.relu_pattern())
    };

    let mut report = GradCheckReport::default();
    report.grad_norm = analytic.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    for t in 0..analytic.len() {
        for idx in 0..analytic[t].len() {
            let (r, c) = (idx / analytic[t].ncols(), idx % analytic[t].ncols());
            let orig = model.params[t][(r, c)];
            model.params[t][(r, c)] = orig + STEP;
            let (plus, pat_plus) = eval(model);
            model.params[t][(r, c)] = orig - STEP;
            let (minus, pat_minus) = eval(model);
            model.params[t][(r, c)] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[t][(r, c)];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report
}

fn random_batch(
    model: &NeuralAligner<f64>,
    rng: &mut ChaCha8Rng,
    words: &[&str],
    phoneme_level: bool,
) -> (Vec<(EncodedSeq, EncodedSeq)>, Vec<Option<u8>>) {
    let max_len = model.config().max_positions.min(6);
    let level = if phoneme_level { Level::Phoneme } else { Level::Word };
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=max_len);
        let tokens: Vec<Token> = (0..n)
            .map(|_| {
                if phoneme_level {
                    Token::Phoneme(Phoneme::from_index(rng.random_range(0..39)).expect("index in range"))
                } else {
                    Token::word(words[rng.random_range(0..words.len())]).expect("lexicon word")
                }
            })
            .collect();
        TokenSequence::new(level, tokens).expect("single level")
    };
    let mut batch = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..2 {
        let r = draw(rng);
        let d = draw(rng);
        targets.extend((0..r.len()).map(|_| Some(rng.random_range(1..=2u8))));
        targets.push(None);
        targets.extend((0..d.len()).map(|_| Some(rng.random_range(0..=1u8))));
        batch.push(model.encode_sequences(&r, &d).expect("tokenizable"));
    }
    (batch, targets)
}

/// Finite-difference check of a freshly initialised phoneme model and word
/// model built from `encoder`, each on a random two-record batch.
pub fn grad_check(encoder: &EncoderConfig, loss_cfg: &FocalLossConfig, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::builtin();
    let words: Vec<&str> = lexicon.words().take(40).collect();
    let mut report = GradCheckReport::default();
    for phoneme_level in [true, false] {
        let tokenizer = if phoneme_level { TokenizerSpec::phoneme() } else { TokenizerSpec::word(words.iter().copied()) };
        let mut model = NeuralAligner::<f64>::new(encoder.clone(), tokenizer, rng.random()).expect("valid config");
        // Random biases so every ReLU branch and bias gradient is exercised.
        for (name, t) in model.names.iter().zip(model.params.iter_mut()) {
            if name.ends_with("_b") {
                t.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            }
        }
        let (batch, targets) = random_batch(&model, &mut rng, &words, phoneme_level);
        report.merge(&grad_check_pair(&mut model, &batch, &targets, loss_cfg));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match() {
        let report = grad_check(&EncoderConfig::tiny(), &FocalLossConfig::default(), 3);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 500);
    }

    #[test]
    fn multi_head_gradients_match() {
        let encoder = EncoderConfig { heads: 2, joint_layers: 2, ..EncoderConfig::tiny() };
        let report = grad_check(&encoder, &FocalLossConfig::default(), 5);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn saturated_correct_predictions_have_no_gradient() {
        let mut model = NeuralAligner::<f64>::new(EncoderConfig::tiny(), TokenizerSpec::phoneme(), 1).unwrap();
        model.tensor_mut("out_w").unwrap().fill(0.0);
        *model.tensor_mut("out_b").unwrap() = ndarray::array![[0.0, 60.0, 0.0]];
        let r = TokenSequence::parse(Level::Phoneme, "P EH N").unwrap();
        let batch = vec![model.encode_sequences(&r, &r).unwrap()];
        let targets = vec![Some(1), Some(1), Some(1), None, Some(1), Some(1), Some(1)];
        let report = grad_check_pair(&mut model, &batch, &targets, &FocalLossConfig::default());
        assert!(report.grad_norm < 1e-12, "{report:?}");
    }
}
