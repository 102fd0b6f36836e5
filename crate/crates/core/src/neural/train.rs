use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::checkpoint::{ModelCheckpoint, TrainingMetadata};
use super::config::{EncoderConfig, FocalLossConfig, TrainConfig};
use super::loss::focal_loss;
use super::model::NeuralAligner;
use super::predict::predict_labels;
use super::tokenizer::{EncodedSeq, TokenizerSpec};
use super::ModelError;
use crate::scalar::Scalar;
use crate::simulator::{CorpusRecord, JointLabelEncoding};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("record {id}: {source}")]
    Record { id: u64, source: ModelError },
    #[error("loss is not finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub loss: f64,
}

/// Per-row targets for the `[ref][SEP][dys]` layout; the separator has none.
pub fn joint_targets(labels: &JointLabelEncoding) -> Vec<Option<u8>> {
    let mut out = Vec::with_capacity(labels.len() + 1);
    out.extend(labels.ref_labels.iter().map(|&l| Some(l)));
    out.push(None);
    out.extend(labels.dys_labels.iter().map(|&l| Some(l)));
    out
}

struct Example {
    pair: (EncodedSeq, EncodedSeq),
    targets: Vec<Option<u8>>,
}

fn prepare<F: Scalar>(model: &NeuralAligner<F>, records: &[CorpusRecord]) -> Result<Vec<Example>, TrainError> {
    records
        .iter()
        .map(|r| {
            let pair = model
                .encode_sequences(&r.reference, &r.dysfluent)
                .map_err(|source| TrainError::Record { id: r.id, source })?;
            Ok(Example { pair, targets: joint_targets(&r.labels) })
        })
        .collect()
}

/// Loss summed over labeled rows, the row count, and optionally gradients.
fn batch_pass<F: Scalar>(
    model: &NeuralAligner<F>,
    batch: &[&Example],
    loss_cfg: &FocalLossConfig,
    want_grad: bool,
) -> (f64, usize, Option<Vec<Array2<F>>>) {
    let pairs: Vec<(EncodedSeq, EncodedSeq)> = batch.iter().map(|e| e.pair.clone()).collect();
    let targets: Vec<Option<u8>> = batch.iter().flat_map(|e| e.targets.iter().copied()).collect();
    let fwd = model.forward(&pairs);
    let fl = focal_loss(&fwd.probs, &targets, loss_cfg);
    let grads = want_grad.then(|| model.backward(&fwd, &fl.dlogits));
    (fl.loss.as_f64() * fl.count as f64, fl.count, grads)
}

fn mean_loss<F: Scalar>(model: &NeuralAligner<F>, examples: &[Example], batch_size: usize, loss_cfg: &FocalLossConfig) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    let refs: Vec<&Example> = examples.iter().collect();
    for chunk in refs.chunks(batch_size) {
        let (sum, n, _) = batch_pass(model, chunk, loss_cfg, false);
        total += sum;
        count += n;
    }
    total / count.max(1) as f64
}

struct Adam<F> {
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    step: i32,
    cfg: TrainConfig,
}

impl<F: Scalar> Adam<F> {
    fn new(params: &[Array2<F>], cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam { m: zeros(), v: zeros(), step: 0, cfg: cfg.clone() }
    }

    fn update(&mut self, params: &mut [Array2<F>], grads: &[Array2<F>]) {
        self.step += 1;
        let (b1, b2) = (F::of(self.cfg.beta1), F::of(self.cfg.beta2));
        let c1 = F::one() / (F::one() - b1.powi(self.step));
        let c2 = F::one() / (F::one() - b2.powi(self.step));
        let lr = F::of(self.cfg.learning_rate);
        let eps = F::of(self.cfg.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
            });
        }
    }
}

pub fn train(
    records: &[CorpusRecord],
    tokenizer: TokenizerSpec,
    encoder: &EncoderConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &FocalLossConfig,
) -> Result<ModelCheckpoint, TrainError> {
    train_with(records, tokenizer, encoder, train_cfg, loss_cfg, |_| {})
}

/// Trains in single precision with Adam, calling `on_epoch` after the
/// initial evaluation and after every epoch.
///
/// Batches are drawn from a per-epoch shuffle seeded from `train_cfg.seed`;
/// the same seed gives the same checkpoint bit for bit.
pub fn train_with(
    records: &[CorpusRecord],
    tokenizer: TokenizerSpec,
    encoder: &EncoderConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &FocalLossConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<ModelCheckpoint, TrainError> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut model = NeuralAligner::<f32>::new(encoder.clone(), tokenizer, train_cfg.seed)?;
    let examples = prepare(&model, records)?;

    let initial = mean_loss(&model, &examples, train_cfg.batch_size, loss_cfg);
    if !initial.is_finite() {
        return Err(TrainError::Diverged { epoch: 0 });
    }
    let mut history = vec![initial];
    on_epoch(&EpochReport { epoch: 0, loss: initial });

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(model.tensors(), train_cfg);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (sum, n, grads) = batch_pass(&model, &batch, loss_cfg, true);
            let grads = grads.expect("gradients requested");
            if !sum.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::Diverged { epoch });
            }
            adam.update(model.tensors_mut(), &grads);
            total += sum;
            count += n;
        }
        let loss = total / count.max(1) as f64;
        history.push(loss);
        on_epoch(&EpochReport { epoch, loss });
    }

    let metadata = TrainingMetadata {
        seed: train_cfg.seed,
        epochs: train_cfg.epochs,
        final_loss: *history.last().expect("history is never empty"),
        loss_history: history,
        records: records.len(),
        train: train_cfg.clone(),
        loss: loss_cfg.clone(),
    };
    Ok(ModelCheckpoint::new(model, metadata))
}

/// Fraction of label positions (both sides) where the repaired prediction
/// equals the gold label.
pub fn token_label_accuracy<F: Scalar>(model: &NeuralAligner<F>, records: &[CorpusRecord]) -> Result<f64, ModelError> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for r in records {
        let pred = predict_labels(model, &r.reference, &r.dysfluent)?;
        let pairs = pred
            .labels
            .ref_labels
            .iter()
            .zip(&r.labels.ref_labels)
            .chain(pred.labels.dys_labels.iter().zip(&r.labels.dys_labels));
        for (a, b) in pairs {
            hit += usize::from(a == b);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
