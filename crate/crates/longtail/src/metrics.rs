//! Per-class average precision on the class-balanced test split, aggregated
//! over frequency groups (mAP plus rare/common/frequent means).

use serde::{Deserialize, Serialize};

use crate::data::FreqGroup;
use crate::types::SampleLabel;

/// For each class, the test samples ranked by that class's confidence:
/// descending score, ties broken by ascending sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct PerClassScores {
    classes: Vec<Vec<(f64, bool)>>,
}

impl PerClassScores {
    /// Builds rankings from an `n x num_classes` score table and the test
    /// labels; a sample is a positive for its own class only.
    pub fn from_scores(scores: &[Vec<f64>], labels: &[SampleLabel], num_classes: usize) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels disagree");
        let mut classes = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let mut entries: Vec<(f64, bool, usize)> = scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (row, label))| (row[c], *label == SampleLabel::Foreground(c), i))
                .collect();
            entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
            classes.push(entries.into_iter().map(|(s, p, _)| (s, p)).collect());
        }
        Self { classes }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &[(f64, bool)] {
        &self.classes[c]
    }

    /// Average precision per class; `None` where the class has no positives.
    pub fn average_precisions(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|r| average_precision(r)).collect()
    }
}

/// Rank-sum average precision: the mean of precision-at-rank over the ranks
/// that hold positives. `None` when the ranking contains no positive.
pub fn average_precision(ranked: &[(f64, bool)]) -> Option<f64> {
    let mut positives = 0usize;
    let mut sum = 0.0;
    for (rank, (_, is_positive)) in ranked.iter().enumerate() {
        if *is_positive {
            positives += 1;
            sum += positives as f64 / (rank + 1) as f64;
        }
    }
    (positives > 0).then(|| sum / positives as f64)
}

/// Per-class AP entry of a [`GroupReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub group: FreqGroup,
    /// Absent when the class had no positives and was excluded.
    pub ap: Option<f64>,
}

/// Group-aggregated evaluation report. Group means are unweighted over the
/// evaluated classes of the group and absent (not zero) for empty groups;
/// `m_ap` is the unweighted mean over all evaluated classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub score_source: String,
    pub per_class: Vec<ClassAp>,
    pub excluded: Vec<usize>,
    pub m_ap: Option<f64>,
    pub ap_rare: Option<f64>,
    pub ap_common: Option<f64>,
    pub ap_frequent: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregates per-class APs into the group report.
pub fn group_report(
    per_class_ap: &[Option<f64>],
    group_of: &[FreqGroup],
    score_source: &str,
) -> GroupReport {
    assert_eq!(
        per_class_ap.len(),
        group_of.len(),
        "group map must cover all evaluated classes"
    );
    let per_class: Vec<ClassAp> = per_class_ap
        .iter()
        .zip(group_of)
        .enumerate()
        .map(|(class, (&ap, &group))| ClassAp { class, group, ap })
        .collect();
    let excluded: Vec<usize> = per_class
        .iter()
        .filter(|c| c.ap.is_none())
        .map(|c| c.class)
        .collect();
    let evaluated: Vec<&ClassAp> = per_class.iter().filter(|c| c.ap.is_some()).collect();
    let of_group = |g: FreqGroup| -> Vec<f64> {
        evaluated
            .iter()
            .filter(|c| c.group == g)
            .map(|c| c.ap.unwrap())
            .collect()
    };
    let all: Vec<f64> = evaluated.iter().map(|c| c.ap.unwrap()).collect();
    GroupReport {
        score_source: score_source.to_string(),
        m_ap: mean(&all),
        ap_rare: mean(&of_group(FreqGroup::Rare)),
        ap_common: mean(&of_group(FreqGroup::Common)),
        ap_frequent: mean(&of_group(FreqGroup::Frequent)),
        per_class,
        excluded,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "absent".to_string(),
    }
}

impl GroupReport {
    /// Tab-delimited rendering: header metadata, one row per class, and a
    /// summary block.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# score_source={}\n", self.score_source));
        if !self.excluded.is_empty() {
            let list: Vec<String> = self.excluded.iter().map(usize::to_string).collect();
            out.push_str(&format!("# excluded_classes={}\n", list.join(",")));
        }
        out.push_str("class\tgroup\tap\n");
        for c in &self.per_class {
            out.push_str(&format!("{}\t{}\t{}\n", c.class, c.group, fmt_opt(c.ap)));
        }
        out.push_str("summary\tm_ap\t");
        out.push_str(&fmt_opt(self.m_ap));
        out.push('\n');
        out.push_str(&format!("summary\tap_r\t{}\n", fmt_opt(self.ap_rare)));
        out.push_str(&format!("summary\tap_c\t{}\n", fmt_opt(self.ap_common)));
        out.push_str(&format!("summary\tap_f\t{}\n", fmt_opt(self.ap_frequent)));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}
