//! A desk-scale laboratory for long-tail classification losses.
//!
//! The crate centers on an adaptive class suppression loss that gates each
//! negative class's gradient on the classifier's own confidence, compared
//! against plain sigmoid BCE, softmax cross-entropy, an equalization loss,
//! and a grouped softmax. Around the losses sit a reproducible synthetic
//! long-tail data generator, a two-stage SGD trainer with manual
//! backpropagation, group-split average-precision evaluation, and an
//! experiment driver for threshold sweeps and loss comparisons.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod family;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod train;
pub mod types;

mod seeding;

pub use error::{DataError, ExperimentError, LossError, TrainError};
pub use family::{LossFamily, ResolvedLoss};
pub use types::{AcslConfig, GradVector, LogitVector, ProbVector, SampleLabel, WeightMask};
