//! Core per-sample types shared by every loss: logits, probabilities,
//! labels, binary weight masks, and gradients.

use crate::error::LossError;

/// Raw per-class scores for one sample. Entries are validated finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::EmptyInput);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(LossError::NonFinite { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-class confidences, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::EmptyInput);
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(LossError::ProbOutOfRange { index, value });
            }
        }
        Ok(Self { values })
    }

    /// Internal constructor for values already guaranteed inside (0, 1).
    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&p| p > 0.0 && p < 1.0));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The class identity of one sample: a foreground class index, or the
/// explicit background marker (a negative for every class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleLabel {
    Foreground(usize),
    Background,
}

impl SampleLabel {
    pub fn foreground_index(&self) -> Option<usize> {
        match self {
            SampleLabel::Foreground(k) => Some(*k),
            SampleLabel::Background => None,
        }
    }

    /// Checks a foreground index against the class count.
    pub fn validate(&self, classes: usize) -> Result<(), LossError> {
        match self {
            SampleLabel::Foreground(k) if *k >= classes => Err(LossError::ClassOutOfRange {
                index: *k,
                classes,
            }),
            _ => Ok(()),
        }
    }
}

/// Per-class binary gate deciding which classes receive loss terms and
/// suppression gradients. Entries are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    weights: Vec<f64>,
}

impl WeightMask {
    pub fn new(weights: Vec<f64>) -> Result<Self, LossError> {
        if weights.is_empty() {
            return Err(LossError::EmptyInput);
        }
        for (index, &value) in weights.iter().enumerate() {
            if value != 0.0 && value != 1.0 {
                return Err(LossError::NonBinaryWeight { index, value });
            }
        }
        Ok(Self { weights })
    }

    /// All-ones mask of the given length.
    pub fn ones(len: usize) -> Self {
        Self {
            weights: vec![1.0; len],
        }
    }

    pub(crate) fn new_unchecked(weights: Vec<f64>) -> Self {
        debug_assert!(weights.iter().all(|&w| w == 0.0 || w == 1.0));
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Elementwise AND of two binary masks.
    pub fn intersect(&self, other: &WeightMask) -> Result<WeightMask, LossError> {
        if self.len() != other.len() {
            return Err(LossError::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(WeightMask::new_unchecked(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a * b)
                .collect(),
        ))
    }
}

/// Confidence threshold for adaptive suppression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcslConfig {
    xi: f64,
}

impl AcslConfig {
    pub fn new(xi: f64) -> Result<Self, LossError> {
        if !(xi.is_finite() && (0.0..=1.0).contains(&xi)) {
            return Err(LossError::InvalidThreshold { value: xi });
        }
        Ok(Self { xi })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }
}

/// Per-class loss gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
}

impl GradVector {
    pub(crate) fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
