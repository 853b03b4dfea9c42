//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor math, model construction, training, evaluation
/// and artifact I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: operand shapes do not conform: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("loss term `{term}` is not finite (value {value})")]
    NonFiniteLoss { term: &'static str, value: f64 },

    #[error("training diverged at step {step}: loss term `{term}` not finite")]
    Diverged { step: u64, term: &'static str },

    #[error("degenerate interpolation interval: start_step {start} >= end_step {end}")]
    DegenerateInterval { start: u64, end: u64 },

    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),

    #[error("class prior must sum to 1, got {sum}")]
    InvalidPrior { sum: f64 },

    #[error("invalid discrete joint: {0}")]
    InvalidJoint(String),

    #[error("alphabet size {size} for {var} exceeds the exhaustive-probe cap of {max}")]
    AlphabetTooLarge {
        var: &'static str,
        size: usize,
        max: usize,
    },

    #[error("invalid corruption spec: {0}")]
    InvalidCorruption(String),

    #[error("invalid attack config: {0}")]
    InvalidAttack(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("robustness grids are incompatible: {0}")]
    GridMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unsupported format version {found} (this build reads version {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("malformed {kind} file: {detail}")]
    Malformed { kind: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
