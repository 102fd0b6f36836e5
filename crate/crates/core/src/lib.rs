pub mod align;
pub mod evalkit;
pub mod lexicon;
pub mod neural;
pub mod phoneme;
pub mod scalar;
pub mod simulator;
pub mod sta;

/// Single-precision aligner, the training and checkpoint type.
pub type NeuralAlignerF32 = neural::NeuralAligner<f32>;
/// Double-precision aligner, used for finite-difference checks.
pub type NeuralAlignerF64 = neural::NeuralAligner<f64>;
