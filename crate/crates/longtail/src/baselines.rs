//! Comparison losses: softmax cross-entropy, a deterministic equalization
//! loss, and a grouped softmax with one "others" slot per group.
//!
//! The grouped softmax splits classes into count-based groups and applies an
//! independent softmax cross-entropy inside each group. Every group carries
//! an extra "others" logit appended after the class logits (group `g` owns
//! extended index `num_classes + g`), so a sample in one group still trains
//! every other group through its others slot, and background samples target
//! the others slot of every group.

use crate::error::LossError;
use crate::loss::{masked_bce_grad, masked_bce_loss};
use crate::types::{GradVector, LogitVector, SampleLabel, WeightMask};

/// Count threshold below which a class is treated as tail by the
/// equalization baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EqlConfig {
    tail_threshold: u64,
}

impl EqlConfig {
    pub fn new(tail_threshold: u64) -> Self {
        Self { tail_threshold }
    }

    pub fn tail_threshold(&self) -> u64 {
        self.tail_threshold
    }
}

/// Equalization mask: a foreground sample never suppresses tail classes
/// (count below the threshold); background samples suppress everything.
pub fn eql_weights(
    label: SampleLabel,
    class_counts: &[u64],
    cfg: &EqlConfig,
) -> Result<WeightMask, LossError> {
    if class_counts.is_empty() {
        return Err(LossError::EmptyInput);
    }
    label.validate(class_counts.len())?;
    let weights = match label.foreground_index() {
        None => vec![1.0; class_counts.len()],
        Some(k) => class_counts
            .iter()
            .enumerate()
            .map(|(i, &count)| {
                if i != k && count < cfg.tail_threshold() {
                    0.0
                } else {
                    1.0
                }
            })
            .collect(),
    };
    Ok(WeightMask::new_unchecked(weights))
}

fn check_counts(logits: &LogitVector, class_counts: &[u64]) -> Result<(), LossError> {
    if class_counts.len() != logits.len() {
        return Err(LossError::LengthMismatch {
            expected: logits.len(),
            actual: class_counts.len(),
        });
    }
    Ok(())
}

/// Binary cross-entropy gated by [`eql_weights`].
pub fn eql_loss(
    logits: &LogitVector,
    label: SampleLabel,
    class_counts: &[u64],
    cfg: &EqlConfig,
) -> Result<f64, LossError> {
    check_counts(logits, class_counts)?;
    let mask = eql_weights(label, class_counts, cfg)?;
    masked_bce_loss(logits, label, &mask)
}

/// Gradient of [`eql_loss`]; the count-based mask is a constant.
pub fn eql_grad(
    logits: &LogitVector,
    label: SampleLabel,
    class_counts: &[u64],
    cfg: &EqlConfig,
) -> Result<GradVector, LossError> {
    check_counts(logits, class_counts)?;
    let mask = eql_weights(label, class_counts, cfg)?;
    masked_bce_grad(logits, label, &mask)
}

/// log(sum(exp(z))) with the max subtracted first.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax cross-entropy `-log softmax(z)_k`.
///
/// Background samples are not accepted directly; the caller appends a
/// background class and labels such samples with its index.
pub fn softmax_ce_loss(logits: &LogitVector, label: SampleLabel) -> Result<f64, LossError> {
    let k = label
        .foreground_index()
        .ok_or(LossError::BackgroundNotSupported)?;
    label.validate(logits.len())?;
    let z = logits.values();
    Ok(log_sum_exp(z.iter().copied()) - z[k])
}

/// Gradient of [`softmax_ce_loss`]: `softmax(z)_i - [i == k]`.
pub fn softmax_ce_grad(logits: &LogitVector, label: SampleLabel) -> Result<GradVector, LossError> {
    let k = label
        .foreground_index()
        .ok_or(LossError::BackgroundNotSupported)?;
    label.validate(logits.len())?;
    let probs = softmax_probs(logits.values());
    let values = probs
        .into_iter()
        .enumerate()
        .map(|(i, p)| if i == k { p - 1.0 } else { p })
        .collect();
    Ok(GradVector::new(values))
}

/// Stable softmax over a logit slice.
pub fn softmax_probs(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z.iter().copied());
    z.iter().map(|&v| (v - lse).exp()).collect()
}

/// Count-threshold partition of classes into consecutive groups.
///
/// Strictly ascending thresholds `t_1 < ... < t_m` split classes into
/// `m + 1` groups: a class of count `c` lands in the group counting how many
/// thresholds are `<= c`. Construction fails if any group ends up empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    thresholds: Vec<u64>,
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn from_counts(class_counts: &[u64], thresholds: &[u64]) -> Result<Self, LossError> {
        if class_counts.is_empty() {
            return Err(LossError::EmptyInput);
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LossError::UnorderedThresholds);
        }
        let num_groups = thresholds.len() + 1;
        let group_of: Vec<usize> = class_counts
            .iter()
            .map(|&c| thresholds.iter().filter(|&&t| c >= t).count())
            .collect();
        let mut members = vec![Vec::new(); num_groups];
        for (class, &g) in group_of.iter().enumerate() {
            members[g].push(class);
        }
        if let Some(group) = members.iter().position(Vec::is_empty) {
            return Err(LossError::EmptyGroup { group });
        }
        Ok(Self {
            thresholds: thresholds.to_vec(),
            group_of,
            members,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.group_of.len()
    }

    pub fn num_groups(&self) -> usize {
        self.members.len()
    }

    pub fn thresholds(&self) -> &[u64] {
        &self.thresholds
    }

    pub fn group_of(&self, class: usize) -> usize {
        self.group_of[class]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    /// Length of the extended logit vector: class logits plus one others
    /// slot per group.
    pub fn extended_len(&self) -> usize {
        self.num_classes() + self.num_groups()
    }

    /// Extended index of a group's others slot.
    pub fn others_slot(&self, group: usize) -> usize {
        self.num_classes() + group
    }

    fn check_extended(&self, logits: &LogitVector) -> Result<(), LossError> {
        if logits.len() != self.extended_len() {
            return Err(LossError::LengthMismatch {
                expected: self.extended_len(),
                actual: logits.len(),
            });
        }
        Ok(())
    }

    fn target_slot(&self, group: usize, label: SampleLabel) -> usize {
        match label.foreground_index() {
            Some(k) if self.group_of[k] == group => k,
            _ => self.others_slot(group),
        }
    }
}

/// Sum over groups of the within-group softmax cross-entropy on the extended
/// logits. The sample's own group targets its class; every other group (and
/// every group, for background samples) targets its others slot.
pub fn group_softmax_loss(
    logits: &LogitVector,
    label: SampleLabel,
    part: &GroupPartition,
) -> Result<f64, LossError> {
    part.check_extended(logits)?;
    label.validate(part.num_classes())?;
    let z = logits.values();
    let mut loss = 0.0;
    for g in 0..part.num_groups() {
        let slots = group_slots(part, g);
        let target = part.target_slot(g, label);
        let lse = log_sum_exp(slots.iter().map(|&s| z[s]));
        loss += lse - z[target];
    }
    Ok(loss)
}

/// Gradient of [`group_softmax_loss`] over the extended logits; each group's
/// entries (members plus others slot) are softmax-minus-target and sum to 0.
pub fn group_softmax_grad(
    logits: &LogitVector,
    label: SampleLabel,
    part: &GroupPartition,
) -> Result<GradVector, LossError> {
    part.check_extended(logits)?;
    label.validate(part.num_classes())?;
    let z = logits.values();
    let mut grad = vec![0.0; part.extended_len()];
    for g in 0..part.num_groups() {
        let slots = group_slots(part, g);
        let target = part.target_slot(g, label);
        let lse = log_sum_exp(slots.iter().map(|&s| z[s]));
        for &s in &slots {
            let p = (z[s] - lse).exp();
            grad[s] = if s == target { p - 1.0 } else { p };
        }
    }
    Ok(GradVector::new(grad))
}

/// Per-class confidence under the grouped softmax: each class's probability
/// within its own group (others slots included in the normalization).
pub fn group_softmax_scores(
    logits: &LogitVector,
    part: &GroupPartition,
) -> Result<Vec<f64>, LossError> {
    part.check_extended(logits)?;
    let z = logits.values();
    let mut scores = vec![0.0; part.num_classes()];
    for g in 0..part.num_groups() {
        let slots = group_slots(part, g);
        let lse = log_sum_exp(slots.iter().map(|&s| z[s]));
        for &s in &slots {
            if s < part.num_classes() {
                scores[s] = (z[s] - lse).exp();
            }
        }
    }
    Ok(scores)
}

fn group_slots(part: &GroupPartition, group: usize) -> Vec<usize> {
    let mut slots = part.members(group).to_vec();
    slots.push(part.others_slot(group));
    slots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{bce_grad, bce_loss};

    fn logits(values: &[f64]) -> LogitVector {
        LogitVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn softmax_ce_uniform_and_saturated() {
        let v = softmax_ce_loss(&logits(&[0.0, 0.0]), SampleLabel::Foreground(0)).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let v = softmax_ce_loss(&logits(&[10.0, 0.0, 0.0]), SampleLabel::Foreground(0)).unwrap();
        assert!(v < 1e-3);
    }

    #[test]
    fn softmax_ce_matches_high_precision_reference() {
        // z = [0.5, -0.2, 1.1, 0.0], k = 2, evaluated independently.
        let v = softmax_ce_loss(&logits(&[0.5, -0.2, 1.1, 0.0]), SampleLabel::Foreground(2))
            .unwrap();
        assert!((v - 0.76742616190288873806).abs() < 1e-14);
    }

    #[test]
    fn softmax_ce_rejects_background() {
        assert!(matches!(
            softmax_ce_loss(&logits(&[0.0]), SampleLabel::Background),
            Err(LossError::BackgroundNotSupported)
        ));
        assert!(matches!(
            softmax_ce_grad(&logits(&[0.0]), SampleLabel::Background),
            Err(LossError::BackgroundNotSupported)
        ));
    }

    #[test]
    fn softmax_grad_balanced_pair_and_zero_sum() {
        let g = softmax_ce_grad(&logits(&[0.0, 0.0]), SampleLabel::Foreground(0)).unwrap();
        assert!((g.values()[0] + 0.5).abs() < 1e-15);
        assert!((g.values()[1] - 0.5).abs() < 1e-15);

        let g = softmax_ce_grad(&logits(&[1.7, -0.3, 0.2, 2.4]), SampleLabel::Foreground(2))
            .unwrap();
        let sum: f64 = g.values().iter().sum();
        assert!(sum.abs() < 1e-14);
    }

    #[test]
    fn eql_mask_spares_tail_classes_from_head_samples() {
        let cfg = EqlConfig::new(50);
        let mask = eql_weights(SampleLabel::Foreground(0), &[1000, 5], &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 0.0]);

        // positive class keeps weight 1 even when itself tail
        let mask = eql_weights(SampleLabel::Foreground(1), &[1000, 5], &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn eql_mask_zero_threshold_is_all_ones() {
        let cfg = EqlConfig::new(0);
        let mask = eql_weights(SampleLabel::Foreground(0), &[3, 900], &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn eql_background_is_all_ones() {
        let cfg = EqlConfig::new(50);
        let mask = eql_weights(SampleLabel::Background, &[1000, 5], &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn eql_reduces_to_bce_when_all_classes_are_head() {
        let cfg = EqlConfig::new(10);
        let l = logits(&[0.4, -1.1, 2.0]);
        let counts = [100, 200, 300];
        for label in [SampleLabel::Foreground(1), SampleLabel::Background] {
            assert_eq!(
                eql_loss(&l, label, &counts, &cfg).unwrap(),
                bce_loss(&l, label).unwrap()
            );
            assert_eq!(
                eql_grad(&l, label, &counts, &cfg).unwrap(),
                bce_grad(&l, label).unwrap()
            );
        }
    }

    #[test]
    fn eql_masked_entries_have_zero_gradient() {
        let cfg = EqlConfig::new(50);
        let l = logits(&[0.4, -1.1, 2.0]);
        let g = eql_grad(&l, SampleLabel::Foreground(0), &[1000, 5, 8], &cfg).unwrap();
        assert_eq!(g.values()[1], 0.0);
        assert_eq!(g.values()[2], 0.0);
    }

    #[test]
    fn partition_from_counts() {
        // paper-style single dividing line at 500
        let part = GroupPartition::from_counts(&[1000, 600, 400, 30, 2], &[500]).unwrap();
        assert_eq!(part.num_groups(), 2);
        assert_eq!(part.group_of(0), 1);
        assert_eq!(part.group_of(1), 1);
        assert_eq!(part.group_of(2), 0);
        assert_eq!(part.members(0), &[2, 3, 4]);
        assert_eq!(part.extended_len(), 7);
        assert_eq!(part.others_slot(1), 6);
    }

    #[test]
    fn partition_rejects_empty_group_and_bad_thresholds() {
        assert!(matches!(
            GroupPartition::from_counts(&[1000, 600], &[500]),
            Err(LossError::EmptyGroup { group: 0 })
        ));
        assert!(matches!(
            GroupPartition::from_counts(&[10, 1000], &[500, 500]),
            Err(LossError::UnorderedThresholds)
        ));
    }

    #[test]
    fn partition_assignment_depends_only_on_counts() {
        let a = GroupPartition::from_counts(&[7, 300, 7], &[100]).unwrap();
        assert_eq!(a.group_of(0), a.group_of(2));
    }

    #[test]
    fn single_group_matches_softmax_ce() {
        // one group over all classes: the others slot coincides with an
        // appended background class, so the losses agree entry for entry
        let part = GroupPartition::from_counts(&[10, 20, 30], &[]).unwrap();
        let l = logits(&[0.3, -0.8, 1.4, 0.1]);
        for k in 0..3 {
            let a = group_softmax_loss(&l, SampleLabel::Foreground(k), &part).unwrap();
            let b = softmax_ce_loss(&l, SampleLabel::Foreground(k)).unwrap();
            assert!((a - b).abs() < 1e-15);
            let ga = group_softmax_grad(&l, SampleLabel::Foreground(k), &part).unwrap();
            let gb = softmax_ce_grad(&l, SampleLabel::Foreground(k)).unwrap();
            for (x, y) in ga.values().iter().zip(gb.values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        // background targets the lone others slot, i.e. the background class
        let a = group_softmax_loss(&l, SampleLabel::Background, &part).unwrap();
        let b = softmax_ce_loss(&l, SampleLabel::Foreground(3)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn two_singleton_groups_at_zero_logits() {
        // each group is a 2-way softmax (class vs others) at zero logits
        let part = GroupPartition::from_counts(&[5, 500], &[100]).unwrap();
        let l = logits(&[0.0, 0.0, 0.0, 0.0]);
        let v = group_softmax_loss(&l, SampleLabel::Foreground(0), &part).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn group_grad_sums_to_zero_per_group() {
        let part = GroupPartition::from_counts(&[5, 500, 40, 800], &[100]).unwrap();
        let l = logits(&[0.3, -0.8, 1.4, 0.1, -0.5, 2.0]);
        for label in [SampleLabel::Foreground(2), SampleLabel::Background] {
            let g = group_softmax_grad(&l, label, &part).unwrap();
            for group in 0..part.num_groups() {
                let mut sum: f64 = part.members(group).iter().map(|&c| g.values()[c]).sum();
                sum += g.values()[part.others_slot(group)];
                assert!(sum.abs() < 1e-14, "group {group} gradient sum {sum}");
            }
        }
    }

    #[test]
    fn group_scores_sum_to_one_within_each_group() {
        let part = GroupPartition::from_counts(&[5, 500, 40, 800], &[100]).unwrap();
        let l = logits(&[0.3, -0.8, 1.4, 0.1, -0.5, 2.0]);
        let scores = group_softmax_scores(&l, &part).unwrap();
        let z = l.values();
        for group in 0..part.num_groups() {
            let member_sum: f64 = part.members(group).iter().map(|&c| scores[c]).sum();
            let lse = log_sum_exp(
                part.members(group)
                    .iter()
                    .map(|&c| z[c])
                    .chain(std::iter::once(z[part.others_slot(group)])),
            );
            let others = (z[part.others_slot(group)] - lse).exp();
            assert!((member_sum + others - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_loss_rejects_wrong_logit_length() {
        let part = GroupPartition::from_counts(&[5, 500], &[100]).unwrap();
        let l = logits(&[0.0, 0.0]);
        assert!(matches!(
            group_softmax_loss(&l, SampleLabel::Foreground(0), &part),
            Err(LossError::LengthMismatch { expected: 4, actual: 2 })
        ));
    }
}
