//! JSON checkpoint container with a SHA-256 checksum over its body.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{EncoderConfig, FocalLossConfig, TrainConfig};
use super::model::NeuralAligner;
use super::predict::{predict_labels, Prediction};
use super::tokenizer::TokenizerSpec;
use super::ModelError;
use crate::phoneme::TokenSequence;

pub const CHECKPOINT_FORMAT: &str = "dysalign-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read or write checkpoint: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint {format} version {version}")]
    Version { format: String, version: u32 },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    /// Entry 0 is the loss before training, entry `e` the mean loss of epoch `e`.
    pub loss_history: Vec<f64>,
    pub records: usize,
    pub train: TrainConfig,
    pub loss: FocalLossConfig,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: NeuralAligner<f32>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Body {
    format: String,
    version: u32,
    encoder: EncoderConfig,
    tokenizer: TokenizerSpec,
    params: Vec<NamedTensor>,
    metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Container {
    checksum: String,
    body: Body,
}

fn digest(body: &Body) -> Result<String, CheckpointError> {
    let text = serde_json::to_string(body).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

impl ModelCheckpoint {
    pub fn new(model: NeuralAligner<f32>, metadata: TrainingMetadata) -> Self {
        ModelCheckpoint { model, metadata }
    }

    pub fn version(&self) -> u32 {
        CHECKPOINT_VERSION
    }

    pub fn config(&self) -> &EncoderConfig {
        self.model.config()
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        self.model.tokenizer()
    }

    pub fn predict(&self, reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<Prediction, ModelError> {
        predict_labels(&self.model, reference, dysfluent)
    }

    fn body(&self) -> Body {
        let params = self
            .model
            .names()
            .iter()
            .zip(self.model.tensors())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        Body {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            encoder: self.model.config().clone(),
            tokenizer: self.model.tokenizer().clone(),
            params,
            metadata: self.metadata.clone(),
        }
    }

    /// Hex SHA-256 of the serialized body.
    pub fn checksum(&self) -> Result<String, CheckpointError> {
        digest(&self.body())
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let body = self.body();
        let checksum = digest(&body)?;
        serde_json::to_string(&Container { checksum, body }).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let container: Container = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let body = container.body;
        if body.format != CHECKPOINT_FORMAT || body.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { format: body.format, version: body.version });
        }
        let computed = digest(&body)?;
        if computed != container.checksum {
            return Err(CheckpointError::Checksum { stored: container.checksum, computed });
        }
        let mut tokenizer = body.tokenizer;
        tokenizer.rebuild_index();
        let tensors = body
            .params
            .into_iter()
            .map(|t| {
                let [r, c] = t.shape;
                Array2::from_shape_vec((r, c), t.data)
                    .map(|a| (t.name.clone(), a))
                    .map_err(|_| CheckpointError::Malformed(format!("tensor `{}` data does not fit {r}x{c}", t.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = NeuralAligner::from_tensors(body.encoder, tokenizer, tensors)?;
        Ok(ModelCheckpoint { model, metadata: body.metadata })
    }

    /// Writes through a temporary file so readers never see a partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let text = self.to_json()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;

    fn checkpoint() -> ModelCheckpoint {
        let model = NeuralAligner::<f32>::new(EncoderConfig::tiny(), TokenizerSpec::phoneme(), 5).unwrap();
        let metadata = TrainingMetadata {
            seed: 5,
            epochs: 0,
            final_loss: 0.25,
            loss_history: vec![0.25],
            records: 0,
            train: TrainConfig::default(),
            loss: FocalLossConfig::default(),
        };
        ModelCheckpoint::new(model, metadata)
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let ckpt = checkpoint();
        let text = ckpt.to_json().unwrap();
        let back = ModelCheckpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let r = TokenSequence::parse(Level::Phoneme, "P EH N").unwrap();
        assert_eq!(back.predict(&r, &r).unwrap(), ckpt.predict(&r, &r).unwrap());
    }

    #[test]
    fn arbitrary_floats_survive_the_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut ckpt = checkpoint();
        ckpt.metadata.loss_history = (0..2000).map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-12..3))).collect();
        ckpt.metadata.final_loss = *ckpt.metadata.loss_history.last().unwrap();
        for t in ckpt.model.tensors_mut() {
            t.mapv_inplace(|_| rng.random_range(-3.0f32..3.0));
        }
        let text = ckpt.to_json().unwrap();
        let back = ModelCheckpoint::from_json(&text).unwrap();
        assert_eq!(back.metadata, ckpt.metadata);
        assert_eq!(back.model.tensors(), ckpt.model.tensors());
    }

    #[test]
    fn tampering_is_detected() {
        let text = checkpoint().to_json().unwrap();
        let tampered = text.replacen("\"final_loss\":0.25", "\"final_loss\":0.5", 1);
        assert_ne!(tampered, text);
        assert!(matches!(ModelCheckpoint::from_json(&tampered), Err(CheckpointError::Checksum { .. })));
        let wrong_version = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(ModelCheckpoint::from_json(&wrong_version), Err(CheckpointError::Version { .. })));
        assert!(matches!(ModelCheckpoint::from_json("{"), Err(CheckpointError::Malformed(_))));
    }
}
