//! Minimal dense-tensor arithmetic with layer-wise reverse-mode
//! differentiation, bfloat16 rounding emulation, and a finite-difference
//! gradient oracle.
//!
//! All arithmetic runs in f64. Bfloat16 is a rounding mode applied to
//! multiply inputs, not a storage format, so mixed-precision behaviour can
//! be studied without giving up sharp gradient checks.

use thiserror::Error;

pub mod bf16;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod tensor;

pub use bf16::{bf16_round, bf16_round_f32, round_to_bfloat16};
pub use layer::{conv3d_forward, Layer, Padding};
pub use network::{
    evaluate, gradients, ActivationTrace, Mode, Network, NetworkBuilder, Param, ParamGrads,
    RunningStats,
};
pub use tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PrecisionMode {
    #[default]
    Full,
    Bfloat16Emulated,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite value in {context} at index {index}: {value}")]
    NonFinite {
        context: String,
        index: usize,
        value: f64,
    },
    #[error("trace mismatch: {0}")]
    TraceMismatch(String),
    #[error("checkpoint error at line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;
