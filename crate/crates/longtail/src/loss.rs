//! Sigmoid binary cross-entropy and adaptive class suppression loss (ACSL),
//! with analytic gradients.
//!
//! Both losses treat a C-class sample as C independent binary decisions.
//! For a sample of class k the per-class target probability is `p_k` for the
//! positive class and `1 - p_i` for every other class; a background sample is
//! a negative for all classes. ACSL multiplies each negative term by a binary
//! weight that is 1 only when the class confidence is at or above the
//! threshold, so low-confidence classifiers are spared suppression gradients
//! while confusable high-confidence classifiers keep receiving them.

use crate::error::LossError;
use crate::types::{AcslConfig, GradVector, LogitVector, ProbVector, SampleLabel, WeightMask};

/// Largest f64 strictly below 1.0.
const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Numerically stable sigmoid, clamped into the open interval (0, 1) so
/// saturated logits never round to exactly 0 or 1.
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, PROB_CEIL)
}

/// log(sigmoid(z)) without overflow for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Elementwise sigmoid of a logit vector.
pub fn sigmoid_probs(logits: &LogitVector) -> ProbVector {
    ProbVector::new_unchecked(logits.values().iter().map(|&z| sigmoid(z)).collect())
}

fn check_label(logits: &LogitVector, label: SampleLabel) -> Result<(), LossError> {
    label.validate(logits.len())
}

/// Binary cross-entropy of one sample under an arbitrary binary weight mask.
///
/// `loss = -sum_i w_i * log(p_hat_i)` where `p_hat_i` is `p_i` for the
/// positive class and `1 - p_i` otherwise. The plain BCE, ACSL, and the
/// equalization baseline are this with different masks.
pub fn masked_bce_loss(
    logits: &LogitVector,
    label: SampleLabel,
    mask: &WeightMask,
) -> Result<f64, LossError> {
    check_label(logits, label)?;
    if mask.len() != logits.len() {
        return Err(LossError::LengthMismatch {
            expected: logits.len(),
            actual: mask.len(),
        });
    }
    let positive = label.foreground_index();
    let mut loss = 0.0;
    for (i, (&z, &w)) in logits.values().iter().zip(mask.weights()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let log_p_hat = if Some(i) == positive {
            log_sigmoid(z)
        } else {
            // log(1 - sigmoid(z)) = log_sigmoid(-z)
            log_sigmoid(-z)
        };
        loss -= w * log_p_hat;
    }
    Ok(loss)
}

/// Gradient of [`masked_bce_loss`] with respect to the logits:
/// `w_i * (p_i - 1)` for the positive class and `w_i * p_i` otherwise.
/// The mask is a constant; no gradient flows through it.
pub fn masked_bce_grad(
    logits: &LogitVector,
    label: SampleLabel,
    mask: &WeightMask,
) -> Result<GradVector, LossError> {
    check_label(logits, label)?;
    if mask.len() != logits.len() {
        return Err(LossError::LengthMismatch {
            expected: logits.len(),
            actual: mask.len(),
        });
    }
    let positive = label.foreground_index();
    let values = logits
        .values()
        .iter()
        .zip(mask.weights())
        .enumerate()
        .map(|(i, (&z, &w))| {
            if Some(i) == positive {
                // p - 1 = -sigmoid(-z), computed directly to avoid the
                // cancellation that would round a saturated entry to -1
                w * -sigmoid(-z)
            } else {
                w * sigmoid(z)
            }
        })
        .collect();
    Ok(GradVector::new(values))
}

/// Plain sigmoid binary cross-entropy over all classes.
pub fn bce_loss(logits: &LogitVector, label: SampleLabel) -> Result<f64, LossError> {
    masked_bce_loss(logits, label, &WeightMask::ones(logits.len()))
}

/// Gradient of [`bce_loss`]: `p_i - 1` for the positive class, `p_i` otherwise.
pub fn bce_grad(logits: &LogitVector, label: SampleLabel) -> Result<GradVector, LossError> {
    masked_bce_grad(logits, label, &WeightMask::ones(logits.len()))
}

/// ACSL suppression mask: the positive class always gets weight 1; any other
/// class is suppressed (weight 1) only when its confidence is at or above the
/// threshold. For a background sample the confidence rule applies to every
/// class.
pub fn acsl_weights(
    probs: &ProbVector,
    label: SampleLabel,
    cfg: &AcslConfig,
) -> Result<WeightMask, LossError> {
    label.validate(probs.len())?;
    let positive = label.foreground_index();
    let xi = cfg.xi();
    let weights = probs
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if Some(i) == positive || p >= xi {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(WeightMask::new_unchecked(weights))
}

/// Adaptive class suppression loss: BCE with the [`acsl_weights`] mask
/// evaluated on the current forward-pass confidences.
pub fn acsl_loss(
    logits: &LogitVector,
    label: SampleLabel,
    cfg: &AcslConfig,
) -> Result<f64, LossError> {
    let mask = acsl_weights(&sigmoid_probs(logits), label, cfg)?;
    masked_bce_loss(logits, label, &mask)
}

/// Gradient of [`acsl_loss`]: `p_k - 1` for the positive class, `w_i * p_i`
/// otherwise, with the mask treated as a constant.
pub fn acsl_grad(
    logits: &LogitVector,
    label: SampleLabel,
    cfg: &AcslConfig,
) -> Result<GradVector, LossError> {
    let mask = acsl_weights(&sigmoid_probs(logits), label, cfg)?;
    masked_bce_grad(logits, label, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(values: &[f64]) -> LogitVector {
        LogitVector::new(values.to_vec()).unwrap()
    }

    const LN_9: f64 = 2.1972245773362196;

    #[test]
    fn sigmoid_known_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(LN_9) - 0.9).abs() < 1e-15);
        // Independently evaluated to 20 digits.
        let probs = sigmoid_probs(&logits(&[-1.3, 0.4, 2.0]));
        let expected = [
            0.2141650169574413874,
            0.59868766011245200037,
            0.88079707797788244406,
        ];
        for (p, e) in probs.values().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        for z in [-800.0, -50.0, -1.0, 0.0, 1.0, 36.8, 50.0, 800.0] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "sigmoid({z}) = {p}");
        }
    }

    #[test]
    fn bce_symmetric_cases() {
        let l = logits(&[0.0]);
        let v = bce_loss(&l, SampleLabel::Foreground(0)).unwrap();
        assert!((v - 0.5f64.ln().abs()).abs() < 1e-15);

        let l = logits(&[0.0, 0.0]);
        let v = bce_loss(&l, SampleLabel::Foreground(0)).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2) < 1e-15);
    }

    #[test]
    fn bce_matches_high_precision_reference() {
        // -sum log(p_hat) at z = [0.3, -1.2, 2.2, 0.05, -0.7], k = 1,
        // evaluated independently to 20 digits.
        let l = logits(&[0.3, -1.2, 2.2, 0.05, -0.7]);
        let v = bce_loss(&l, SampleLabel::Foreground(1)).unwrap();
        assert!((v - 5.7443667284739984129).abs() < 1e-13);
    }

    #[test]
    fn bce_background_treats_all_as_negative() {
        let l = logits(&[0.5, -0.5]);
        let expected = -log_sigmoid(-0.5) - log_sigmoid(0.5);
        assert!((bce_loss(&l, SampleLabel::Background).unwrap() - expected).abs() < 1e-15);
        let g = bce_grad(&l, SampleLabel::Background).unwrap();
        assert!((g.values()[0] - sigmoid(0.5)).abs() < 1e-15);
        assert!((g.values()[1] - sigmoid(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn bce_grad_saturation_and_midpoint() {
        let l = logits(&[30.0, 0.0]);
        let g = bce_grad(&l, SampleLabel::Foreground(0)).unwrap();
        assert!(g.values()[0].abs() < 1e-12);
        assert_eq!(g.values()[1], 0.5);
    }

    #[test]
    fn bce_rejects_out_of_range_class() {
        let l = logits(&[0.0, 0.0]);
        assert!(matches!(
            bce_loss(&l, SampleLabel::Foreground(2)),
            Err(LossError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn no_nan_or_inf_for_bounded_logits() {
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64).collect();
        let l = LogitVector::new(grid).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        for label in [SampleLabel::Foreground(0), SampleLabel::Background] {
            assert!(bce_loss(&l, label).unwrap().is_finite());
            assert!(acsl_loss(&l, label, &cfg).unwrap().is_finite());
            assert!(bce_grad(&l, label).unwrap().values().iter().all(|v| v.is_finite()));
            assert!(acsl_grad(&l, label, &cfg).unwrap().values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn acsl_mask_suppresses_only_confident_classes() {
        let probs = ProbVector::new(vec![0.6, 0.2, 0.1, 0.9, 0.05]).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        let mask = acsl_weights(&probs, SampleLabel::Foreground(0), &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn acsl_mask_tie_is_inclusive() {
        let probs = ProbVector::new(vec![0.5, 0.7]).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        let mask = acsl_weights(&probs, SampleLabel::Foreground(0), &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn acsl_mask_zero_threshold_keeps_everything() {
        let probs = ProbVector::new(vec![0.1, 0.0001, 0.9]).unwrap();
        let cfg = AcslConfig::new(0.0).unwrap();
        let mask = acsl_weights(&probs, SampleLabel::Foreground(2), &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn acsl_background_uses_confidence_rule_everywhere() {
        let probs = ProbVector::new(vec![0.8, 0.2]).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        let mask = acsl_weights(&probs, SampleLabel::Background, &cfg).unwrap();
        assert_eq!(mask.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn acsl_loss_matches_hand_evaluated_masked_sum() {
        // p = [0.6, 0.2, 0.1, 0.9, 0.05], xi = 0.7, positive class 0:
        // only the positive term and the suppressed 0.9 term survive,
        // -ln(0.6) - ln(0.1), evaluated independently to 20 digits.
        let z: Vec<f64> = [0.6f64, 0.2, 0.1, 0.9, 0.05]
            .iter()
            .map(|&p| (p / (1.0 - p)).ln())
            .collect();
        let l = LogitVector::new(z).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        let v = acsl_loss(&l, SampleLabel::Foreground(0), &cfg).unwrap();
        assert!((v - 2.8134107167600363672).abs() < 1e-13);
    }

    #[test]
    fn acsl_grad_cases() {
        // suppressed class: zero gradient; retained confident class: p itself
        let z: Vec<f64> = [0.6f64, 0.2, 0.9]
            .iter()
            .map(|&p| (p / (1.0 - p)).ln())
            .collect();
        let l = LogitVector::new(z).unwrap();
        let cfg = AcslConfig::new(0.7).unwrap();
        let g = acsl_grad(&l, SampleLabel::Foreground(0), &cfg).unwrap();
        assert!((g.values()[0] - (0.6 - 1.0)).abs() < 1e-12);
        assert_eq!(g.values()[1], 0.0);
        assert!((g.values()[2] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn acsl_at_zero_threshold_equals_bce_exactly() {
        let l = logits(&[1.2, -0.4, 0.0, 3.0, -2.5]);
        let cfg = AcslConfig::new(0.0).unwrap();
        for label in [SampleLabel::Foreground(3), SampleLabel::Background] {
            assert_eq!(
                acsl_loss(&l, label, &cfg).unwrap(),
                bce_loss(&l, label).unwrap()
            );
            assert_eq!(
                acsl_grad(&l, label, &cfg).unwrap(),
                bce_grad(&l, label).unwrap()
            );
        }
    }

    #[test]
    fn acsl_at_unit_threshold_keeps_only_positive_term() {
        let l = logits(&[1.2, -0.4, 40.0]);
        let cfg = AcslConfig::new(1.0).unwrap();
        let v = acsl_loss(&l, SampleLabel::Foreground(0), &cfg).unwrap();
        assert!((v - (-log_sigmoid(1.2))).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn acsl_never_exceeds_bce(
            z in proptest::collection::vec(-8.0f64..8.0, 1..12),
            xi in 0.0f64..=1.0,
            k in 0usize..12,
        ) {
            let label = if k >= z.len() { SampleLabel::Background } else { SampleLabel::Foreground(k) };
            let l = LogitVector::new(z).unwrap();
            let cfg = AcslConfig::new(xi).unwrap();
            let a = acsl_loss(&l, label, &cfg).unwrap();
            let b = bce_loss(&l, label).unwrap();
            prop_assert!(a <= b + 1e-12);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn acsl_loss_non_increasing_in_threshold(
            z in proptest::collection::vec(-8.0f64..8.0, 1..12),
            k in 0usize..12,
        ) {
            let label = if k >= z.len() { SampleLabel::Background } else { SampleLabel::Foreground(k) };
            let l = LogitVector::new(z).unwrap();
            let mut prev = f64::INFINITY;
            for step in 0..=20 {
                let cfg = AcslConfig::new(step as f64 / 20.0).unwrap();
                let v = acsl_loss(&l, label, &cfg).unwrap();
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }

        #[test]
        fn gradient_entries_stay_bounded(
            z in proptest::collection::vec(-50.0f64..50.0, 1..12),
            xi in 0.0f64..=1.0,
            k in 0usize..12,
        ) {
            let label = if k >= z.len() { SampleLabel::Background } else { SampleLabel::Foreground(k) };
            let l = LogitVector::new(z).unwrap();
            let cfg = AcslConfig::new(xi).unwrap();
            let g = acsl_grad(&l, label, &cfg).unwrap();
            for (i, &v) in g.values().iter().enumerate() {
                prop_assert!((-1.0..=1.0).contains(&v));
                if Some(i) == label.foreground_index() {
                    prop_assert!(v > -1.0 && v < 0.0);
                } else {
                    prop_assert!((0.0..1.0).contains(&v));
                }
            }
        }

        #[test]
        fn acsl_mask_is_equivariant_under_class_permutation(
            z in proptest::collection::vec(-6.0f64..6.0, 2..10),
            xi in 0.0f64..=1.0,
            k in 0usize..10,
            rot in 1usize..9,
        ) {
            let n = z.len();
            let k = k % n;
            let rot = rot % n;
            let cfg = AcslConfig::new(xi).unwrap();
            let probs = sigmoid_probs(&LogitVector::new(z.clone()).unwrap());
            let base = acsl_weights(&probs, SampleLabel::Foreground(k), &cfg).unwrap();

            // rotate classes by `rot` and rotate the label with them
            let mut z_rot = z.clone();
            z_rot.rotate_left(rot);
            let probs_rot = sigmoid_probs(&LogitVector::new(z_rot).unwrap());
            let k_rot = (k + n - rot) % n;
            let rotated = acsl_weights(&probs_rot, SampleLabel::Foreground(k_rot), &cfg).unwrap();

            let mut expected = base.weights().to_vec();
            expected.rotate_left(rot);
            prop_assert_eq!(rotated.weights(), expected.as_slice());
        }
    }
}
