use serde::{Deserialize, Serialize};

use super::ModelError;

pub const NUM_CLASSES: usize = 3;

/// Architecture of the siamese aligner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub context_layers: usize,
    /// Attention heads; must divide `embed_dim`.
    pub heads: usize,
    /// Blocks attending over the whole `[ref][SEP][dys]` layout.
    pub joint_layers: usize,
    pub ffn_hidden: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
    /// Longest sequence the position table covers.
    pub max_positions: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            context_layers: 2,
            heads: 1,
            joint_layers: 2,
            ffn_hidden: 128,
            conv_kernel: 3,
            conv_channels: 128,
            mlp_hidden: 128,
            classes: NUM_CLASSES,
            max_positions: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.embed_dim, self.conv_kernel, self.conv_channels, self.mlp_hidden, self.ffn_hidden, self.max_positions, self.heads];
        if dims.contains(&0) {
            return Err(ModelError::InvalidConfig("all dimensions must be at least 1".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig("heads must divide embed_dim".into()));
        }
        if self.classes != NUM_CLASSES {
            return Err(ModelError::InvalidConfig(format!("classes must be {NUM_CLASSES}")));
        }
        Ok(())
    }

    /// A tiny configuration for finite-difference checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            embed_dim: 4,
            context_layers: 1,
            heads: 1,
            joint_layers: 1,
            ffn_hidden: 3,
            conv_kernel: 3,
            conv_channels: 5,
            mlp_hidden: 4,
            classes: NUM_CLASSES,
            max_positions: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    /// Per-class weights for labels 0, 1, 2.
    pub alpha: [f64; 3],
    pub gamma: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig { alpha: [0.5, 0.1, 0.8], gamma: 3.0 }
    }
}

impl FocalLossConfig {
    pub fn cross_entropy() -> Self {
        FocalLossConfig { alpha: [1.0; 3], gamma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) || !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(ModelError::InvalidConfig("focal loss needs alpha >= 0 and gamma >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 32, epochs: 15, learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(ModelError::InvalidConfig("learning rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ModelError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
