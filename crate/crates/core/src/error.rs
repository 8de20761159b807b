use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("selection size k={k} out of range for dimension {dim}")]
    KOutOfRange { k: usize, dim: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid block layout: {0}")]
    Layout(String),

    #[error("contraction factor undefined for a zero vector")]
    ZeroVector,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("rank {rank} out of range (max {max})")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("empty input")]
    Empty,

    #[error("bit width {0} unsupported (expected 1..=16)")]
    Bits(u32),

    #[error("value {value} outside quantization range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("code {code} exceeds maximum {max} for the bit width")]
    CodeOutOfRange { code: u16, max: u16 },

    #[error("packed buffer has {actual} bytes, expected {expected}")]
    PackedLength { expected: usize, actual: usize },

    #[error("window row width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("invalid hyperparameter: {0}")]
    HyperParam(String),

    #[error("compression condition violated: q_omega = (1+omega)q = {q_omega} >= 1")]
    CompressionCondition { q_omega: f64 },

    #[error("step size {eta} exceeds eps/(4 L C0) = {max}")]
    StepSizeTooLarge { eta: f64, max: f64 },

    #[error("invalid constant: {0}")]
    Constant(String),

    #[error("iterate norm {norm:.3e} exceeded divergence threshold at step {step}")]
    Diverged { step: usize, norm: f64 },

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
