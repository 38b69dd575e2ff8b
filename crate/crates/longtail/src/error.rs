//! Error types for the crate.

use std::io;
use std::path::PathBuf;
use thiserror::Error;

/// Errors from loss evaluation and mask construction.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("input vector is empty")]
    EmptyInput,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("probability {value} at index {index} is outside the open interval (0, 1)")]
    ProbOutOfRange { index: usize, value: f64 },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("expected length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("threshold {value} is outside [0, 1]")]
    InvalidThreshold { value: f64 },
    #[error("mask entry {value} at index {index} is not 0 or 1")]
    NonBinaryWeight { index: usize, value: f64 },
    #[error("background label requires an appended background class")]
    BackgroundNotSupported,
    #[error("partition thresholds must be strictly ascending")]
    UnorderedThresholds,
    #[error("partition group {group} has no classes")]
    EmptyGroup { group: usize },
}

/// Errors from dataset specification, generation, and import/export.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("dataset file corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Errors from model training.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("loss diverged to a non-finite value at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Errors from the experiment driver. Each maps to a distinct exit code.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ExperimentError {
    /// Process exit code: 2 config, 3 training divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config { .. } | ExperimentError::Data(_) => 2,
            ExperimentError::Train(_) => 3,
            ExperimentError::Io { .. } => 4,
        }
    }
}
