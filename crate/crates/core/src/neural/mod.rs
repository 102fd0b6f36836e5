//! Trainable siamese aligner: tokenizer, network, focal loss, trainer,
//! checkpoints and label repair.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
mod predict;
mod tokenizer;
mod train;

pub use checkpoint::{CheckpointError, ModelCheckpoint, TrainingMetadata, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, FocalLossConfig, TrainConfig, NUM_CLASSES};
pub use gradcheck::{grad_check, grad_check_pair, GradCheckReport};
pub use loss::{focal_loss, focal_term, FocalLoss, PROB_FLOOR};
pub use model::{Branch, NeuralAligner, Side, LOGIT_MASK};
pub use predict::{predict_labels, repair_labels, Prediction};
pub use tokenizer::{
    EncodedSeq, TokenizerSpec, CHAR_PAD_ID, CHAR_UNK_ID, PAD, PAD_ID, SEP, SEP_ID, UNK, UNK_ID,
};
pub use train::{joint_targets, token_label_accuracy, train, train_with, EpochReport, TrainError};

use thiserror::Error;

use crate::phoneme::Level;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model expects {expected}-level input, got {found}")]
    LevelMismatch { expected: Level, found: Level },
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds the position table ({max})")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter mismatch: {0}")]
    ShapeMismatch(String),
}
