//! Finite-difference gradient checking for every loss family. The numeric
//! side only ever calls the loss functions, so it stays independent of the
//! analytic gradient paths it validates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::GroupPartition;
use crate::family::{LossFamily, ResolvedLoss};
use crate::loss::sigmoid;
use crate::types::{LogitVector, SampleLabel};

/// Central-difference step used throughout.
pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of a scalar function.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe);
        probe[i] = x[i] - step;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst relative error between two gradients, with the denominator clamped
/// at 1 so near-zero entries are compared absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Outcome of checking one family over many random inputs.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub family: String,
    pub trials: usize,
    pub max_rel_err: f64,
}

fn random_label(rng: &mut ChaCha8Rng, classes: usize) -> SampleLabel {
    if rng.random_bool(0.15) {
        SampleLabel::Background
    } else {
        SampleLabel::Foreground(rng.random_range(0..classes))
    }
}

fn random_logits(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-6.0..6.0)).collect()
}

/// A suppression threshold at a safe margin (> 1e-3) from every confidence,
/// so the mask cannot flip inside the finite-difference stencil.
fn safe_xi(rng: &mut ChaCha8Rng, logits: &[f64]) -> f64 {
    loop {
        let xi: f64 = rng.random_range(0.0..=1.0);
        if logits.iter().all(|&z| (sigmoid(z) - xi).abs() > 1e-3) {
            return xi;
        }
    }
}

fn check_one(
    loss: &ResolvedLoss,
    logits: &[f64],
    label: SampleLabel,
) -> f64 {
    let lv = LogitVector::new(logits.to_vec()).unwrap();
    let analytic = loss.grad(&lv, label, None).unwrap().into_values();
    let numeric = central_diff(
        |z| {
            let lv = LogitVector::new(z.to_vec()).unwrap();
            loss.loss(&lv, label, None).unwrap()
        },
        logits,
        FD_STEP,
    );
    max_rel_err(&analytic, &numeric)
}

/// Runs `trials` random checks per family and reports the worst relative
/// error seen for each.
pub fn check_all_families(trials: usize, seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut run = |family: &str, mut f: Box<dyn FnMut(&mut ChaCha8Rng) -> f64>| {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(f(&mut rng));
        }
        reports.push(GradCheckReport {
            family: family.to_string(),
            trials,
            max_rel_err: worst,
        });
    };

    run(
        "bce",
        Box::new(|rng| {
            let classes = rng.random_range(1..=16);
            let logits = random_logits(rng, classes);
            let label = random_label(rng, classes);
            let counts = vec![1u64; classes];
            let loss = ResolvedLoss::resolve(&LossFamily::Bce, &counts).unwrap();
            check_one(&loss, &logits, label)
        }),
    );

    run(
        "acsl",
        Box::new(|rng| {
            let classes = rng.random_range(1..=16);
            let logits = random_logits(rng, classes);
            let label = random_label(rng, classes);
            let xi = safe_xi(rng, &logits);
            let counts = vec![1u64; classes];
            let loss = ResolvedLoss::resolve(&LossFamily::Acsl { xi }, &counts).unwrap();
            check_one(&loss, &logits, label)
        }),
    );

    run(
        "eql",
        Box::new(|rng| {
            let classes = rng.random_range(1..=16);
            let logits = random_logits(rng, classes);
            let label = random_label(rng, classes);
            let counts: Vec<u64> = (0..classes).map(|_| rng.random_range(1..2000)).collect();
            let tail_threshold = rng.random_range(0..2000);
            let loss =
                ResolvedLoss::resolve(&LossFamily::Eql { tail_threshold }, &counts).unwrap();
            check_one(&loss, &logits, label)
        }),
    );

    run(
        "softmax_ce",
        Box::new(|rng| {
            let classes = rng.random_range(1..=15);
            let logits = random_logits(rng, classes + 1);
            let label = random_label(rng, classes);
            let counts = vec![1u64; classes];
            let loss = ResolvedLoss::resolve(&LossFamily::SoftmaxCe, &counts).unwrap();
            check_one(&loss, &logits, label)
        }),
    );

    run(
        "group_softmax",
        Box::new(|rng| {
            let classes = rng.random_range(2..=14);
            let counts: Vec<u64> = (0..classes).map(|_| rng.random_range(1..1000)).collect();
            let thresholds = random_partition_thresholds(rng, &counts);
            let partition = GroupPartition::from_counts(&counts, &thresholds).unwrap();
            let logits = random_logits(rng, partition.extended_len());
            let label = random_label(rng, classes);
            let loss =
                ResolvedLoss::resolve(&LossFamily::GroupSoftmax { thresholds }, &counts).unwrap();
            check_one(&loss, &logits, label)
        }),
    );

    reports
}

/// Dividing lines chosen between observed counts so no group is empty.
fn random_partition_thresholds(rng: &mut ChaCha8Rng, counts: &[u64]) -> Vec<u64> {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 2 || rng.random_bool(0.2) {
        return Vec::new();
    }
    let cut = rng.random_range(1..sorted.len());
    vec![sorted[cut]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_on_quadratic() {
        let grad = central_diff(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((grad[0] - 4.0).abs() < 1e-9);
        assert!((grad[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rel_err_clamps_denominator() {
        assert_eq!(max_rel_err(&[0.0], &[0.0]), 0.0);
        assert!((max_rel_err(&[1.0e-6], &[0.0]) - 1.0e-6).abs() < 1e-18);
        assert!((max_rel_err(&[4.0], &[2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_families_pass_a_small_run() {
        for report in check_all_families(50, 123) {
            assert!(
                report.max_rel_err < 1e-5,
                "{}: {}",
                report.family,
                report.max_rel_err
            );
        }
    }
}
