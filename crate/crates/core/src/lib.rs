//! Instruction-aware extractive prompt compression.
//!
//! The pipeline: chunk documents ([`text`]), distill compressed references
//! from an LLM ([`distill`]), turn them into word labels ([`align`]), train
//! a preserve/discard token classifier ([`encoder`]), and compress new
//! inputs by keeping the highest-scoring words in order ([`compressor`]).
//! [`eval`] holds the metrics and evaluation harnesses.
//!
//! Model math is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for common use.

pub mod align;
pub mod compressor;
pub mod distill;
pub mod encoder;
pub mod eval;
pub mod jsonl;
pub mod scalar;
pub mod synth;
pub mod text;

pub use scalar::Scalar;

/// Single-precision model, the format stored in checkpoints.
pub type Model32 = encoder::Model<f32>;
/// Double-precision model, used for gradient checks.
pub type Model64 = encoder::Model<f64>;
pub type Params32 = encoder::ModelParams<f32>;
pub type Params64 = encoder::ModelParams<f64>;
