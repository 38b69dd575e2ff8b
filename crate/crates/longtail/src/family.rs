//! Selection of a training loss and its resolution against a concrete
//! dataset (class counts fix the equalization mask and the group partition).

use serde::{Deserialize, Serialize};

use crate::baselines::{
    eql_weights, group_softmax_grad, group_softmax_loss, group_softmax_scores, softmax_ce_grad,
    softmax_ce_loss, softmax_probs, EqlConfig, GroupPartition,
};
use crate::error::LossError;
use crate::loss::{acsl_weights, masked_bce_grad, masked_bce_loss, sigmoid_probs};
use crate::types::{AcslConfig, GradVector, LogitVector, SampleLabel, WeightMask};

/// Configurable loss family for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossFamily {
    /// Sigmoid binary cross-entropy over all classes.
    Bce,
    /// Adaptive class suppression with confidence threshold `xi`.
    Acsl { xi: f64 },
    /// Equalization baseline: head samples never suppress tail classes.
    Eql { tail_threshold: u64 },
    /// Softmax cross-entropy with an appended background class.
    SoftmaxCe,
    /// Per-group softmax with one others slot per group; `thresholds` are
    /// the count dividing lines.
    GroupSoftmax { thresholds: Vec<u64> },
}

impl LossFamily {
    /// Short stable name for directories and table rows.
    pub fn slug(&self) -> String {
        match self {
            LossFamily::Bce => "bce".into(),
            LossFamily::Acsl { xi } => format!("acsl-xi{xi}"),
            LossFamily::Eql { tail_threshold } => format!("eql-t{tail_threshold}"),
            LossFamily::SoftmaxCe => "softmax_ce".into(),
            LossFamily::GroupSoftmax { thresholds } => {
                let parts: Vec<String> = thresholds.iter().map(u64::to_string).collect();
                format!("gsm-t{}", parts.join("_"))
            }
        }
    }
}

/// A loss family bound to a dataset's class counts, ready to evaluate.
#[derive(Debug, Clone)]
pub enum ResolvedLoss {
    Bce {
        classes: usize,
    },
    Acsl {
        classes: usize,
        cfg: AcslConfig,
    },
    Eql {
        counts: Vec<u64>,
        cfg: EqlConfig,
    },
    SoftmaxCe {
        classes: usize,
    },
    GroupSoftmax {
        partition: GroupPartition,
    },
}

impl ResolvedLoss {
    pub fn resolve(family: &LossFamily, class_counts: &[u64]) -> Result<Self, LossError> {
        let classes = class_counts.len();
        if classes == 0 {
            return Err(LossError::EmptyInput);
        }
        Ok(match family {
            LossFamily::Bce => ResolvedLoss::Bce { classes },
            LossFamily::Acsl { xi } => ResolvedLoss::Acsl {
                classes,
                cfg: AcslConfig::new(*xi)?,
            },
            LossFamily::Eql { tail_threshold } => ResolvedLoss::Eql {
                counts: class_counts.to_vec(),
                cfg: EqlConfig::new(*tail_threshold),
            },
            LossFamily::SoftmaxCe => ResolvedLoss::SoftmaxCe { classes },
            LossFamily::GroupSoftmax { thresholds } => ResolvedLoss::GroupSoftmax {
                partition: GroupPartition::from_counts(class_counts, thresholds)?,
            },
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            ResolvedLoss::Bce { classes }
            | ResolvedLoss::Acsl { classes, .. }
            | ResolvedLoss::SoftmaxCe { classes } => *classes,
            ResolvedLoss::Eql { counts, .. } => counts.len(),
            ResolvedLoss::GroupSoftmax { partition } => partition.num_classes(),
        }
    }

    /// Width of the classifier head this loss trains: the class count for
    /// the binary family, plus a background class for softmax, plus one
    /// others slot per group for the grouped softmax.
    pub fn head_len(&self) -> usize {
        match self {
            ResolvedLoss::Bce { classes } | ResolvedLoss::Acsl { classes, .. } => *classes,
            ResolvedLoss::Eql { counts, .. } => counts.len(),
            ResolvedLoss::SoftmaxCe { classes } => classes + 1,
            ResolvedLoss::GroupSoftmax { partition } => partition.extended_len(),
        }
    }

    /// Binary-family losses admit per-class negative retention gating.
    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            ResolvedLoss::Bce { .. } | ResolvedLoss::Acsl { .. } | ResolvedLoss::Eql { .. }
        )
    }

    /// Label of the confidence semantics used for ranking, echoed in report
    /// headers.
    pub fn score_source(&self) -> &'static str {
        match self {
            ResolvedLoss::Bce { .. } | ResolvedLoss::Acsl { .. } | ResolvedLoss::Eql { .. } => {
                "sigmoid"
            }
            ResolvedLoss::SoftmaxCe { .. } => "softmax",
            ResolvedLoss::GroupSoftmax { .. } => "group_softmax",
        }
    }

    fn binary_mask(
        &self,
        logits: &LogitVector,
        label: SampleLabel,
        retain: Option<&WeightMask>,
    ) -> Result<WeightMask, LossError> {
        let base = match self {
            ResolvedLoss::Bce { .. } => WeightMask::ones(logits.len()),
            ResolvedLoss::Acsl { cfg, .. } => {
                acsl_weights(&sigmoid_probs(logits), label, cfg)?
            }
            ResolvedLoss::Eql { counts, cfg } => eql_weights(label, counts, cfg)?,
            _ => unreachable!("binary mask requested for a softmax-family loss"),
        };
        match retain {
            Some(r) => base.intersect(r),
            None => Ok(base),
        }
    }

    fn softmax_label(&self, label: SampleLabel) -> SampleLabel {
        match label {
            SampleLabel::Foreground(k) => SampleLabel::Foreground(k),
            SampleLabel::Background => SampleLabel::Foreground(self.classes()),
        }
    }

    /// Per-sample loss. `retain` gates negative contributions of the binary
    /// family and is ignored by the softmax family.
    pub fn loss(
        &self,
        logits: &LogitVector,
        label: SampleLabel,
        retain: Option<&WeightMask>,
    ) -> Result<f64, LossError> {
        match self {
            ResolvedLoss::Bce { .. } | ResolvedLoss::Acsl { .. } | ResolvedLoss::Eql { .. } => {
                let mask = self.binary_mask(logits, label, retain)?;
                masked_bce_loss(logits, label, &mask)
            }
            ResolvedLoss::SoftmaxCe { .. } => softmax_ce_loss(logits, self.softmax_label(label)),
            ResolvedLoss::GroupSoftmax { partition } => {
                group_softmax_loss(logits, label, partition)
            }
        }
    }

    /// Per-sample gradient with respect to the head logits.
    pub fn grad(
        &self,
        logits: &LogitVector,
        label: SampleLabel,
        retain: Option<&WeightMask>,
    ) -> Result<GradVector, LossError> {
        match self {
            ResolvedLoss::Bce { .. } | ResolvedLoss::Acsl { .. } | ResolvedLoss::Eql { .. } => {
                let mask = self.binary_mask(logits, label, retain)?;
                masked_bce_grad(logits, label, &mask)
            }
            ResolvedLoss::SoftmaxCe { .. } => softmax_ce_grad(logits, self.softmax_label(label)),
            ResolvedLoss::GroupSoftmax { partition } => {
                group_softmax_grad(logits, label, partition)
            }
        }
    }

    /// Per-class confidences for ranking, one entry per foreground class.
    pub fn class_scores(&self, logits: &LogitVector) -> Result<Vec<f64>, LossError> {
        match self {
            ResolvedLoss::Bce { classes } | ResolvedLoss::Acsl { classes, .. } => {
                check_head(logits, *classes)?;
                Ok(sigmoid_probs(logits).values().to_vec())
            }
            ResolvedLoss::Eql { counts, .. } => {
                check_head(logits, counts.len())?;
                Ok(sigmoid_probs(logits).values().to_vec())
            }
            ResolvedLoss::SoftmaxCe { classes } => {
                check_head(logits, classes + 1)?;
                let mut probs = softmax_probs(logits.values());
                probs.truncate(*classes);
                Ok(probs)
            }
            ResolvedLoss::GroupSoftmax { partition } => group_softmax_scores(logits, partition),
        }
    }
}

fn check_head(logits: &LogitVector, expected: usize) -> Result<(), LossError> {
    if logits.len() != expected {
        return Err(LossError::LengthMismatch {
            expected,
            actual: logits.len(),
        });
    }
    Ok(())
}
