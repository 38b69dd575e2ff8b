//! Reproducible synthetic long-tail datasets: Zipf-shaped class counts,
//! Gaussian class clusters with background noise, frequency-group
//! assignment, per-group background retention rates, and a columnar text
//! export/import format.
//!
//! # Dataset file format
//!
//! Line 1: `#longtail-dataset v1`. Line 2: `#spec` followed by space-
//! separated `key=value` pairs for every [`DatasetSpec`] field. Line 3: a
//! `#columns` reminder. Every following non-empty line is one sample:
//!
//! ```text
//! <split> <label> <group> <f_0> ... <f_{d-1}>
//! ```
//!
//! `split` is `train` or `test`; `label` is a class index or `bg`; `group`
//! is `rare`, `common`, `frequent`, or `-` for background rows. Features are
//! written with shortest-roundtrip formatting, so re-importing reproduces
//! the exact f64 bits.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::seeding::{splitmix64, stream_seed, unit_from_hash};
use crate::types::SampleLabel;

const TAG_MEANS: u64 = 0x4d45;
const TAG_TRAIN: u64 = 0x5452;
const TAG_TEST: u64 = 0x5445;
const TAG_BG_TRAIN: u64 = 0x4254;
const TAG_BG_TEST: u64 = 0x4245;
const TAG_RETENTION: u64 = 0x5245;

/// Frequency-group membership of a class, determined by its sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqGroup {
    Rare,
    Common,
    Frequent,
}

impl fmt::Display for FreqGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreqGroup::Rare => write!(f, "rare"),
            FreqGroup::Common => write!(f, "common"),
            FreqGroup::Frequent => write!(f, "frequent"),
        }
    }
}

/// Count ceilings for the rare and common groups: rare is `count <=
/// rare_max`, common is `rare_max < count <= common_max`, frequent is the
/// rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencyGroups {
    pub rare_max: u64,
    pub common_max: u64,
}

impl Default for FrequencyGroups {
    fn default() -> Self {
        Self {
            rare_max: 10,
            common_max: 100,
        }
    }
}

impl FrequencyGroups {
    pub fn new(rare_max: u64, common_max: u64) -> Result<Self, DataError> {
        let g = Self {
            rare_max,
            common_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.rare_max == 0 {
            return Err(DataError::InvalidSpec {
                field: "groups.rare_max",
                reason: "must be positive".into(),
            });
        }
        if self.common_max <= self.rare_max {
            return Err(DataError::InvalidSpec {
                field: "groups.common_max",
                reason: format!("must exceed rare_max={}", self.rare_max),
            });
        }
        Ok(())
    }

    pub fn group_of(&self, count: u64) -> FreqGroup {
        if count <= self.rare_max {
            FreqGroup::Rare
        } else if count <= self.common_max {
            FreqGroup::Common
        } else {
            FreqGroup::Frequent
        }
    }
}

/// Full recipe for one synthetic dataset. Identical specs produce
/// bit-identical datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Zipf decay exponent; 0 gives balanced counts.
    pub zipf_exponent: f64,
    pub max_count: u64,
    pub min_count: u64,
    /// Fraction of all training samples that are background.
    pub background_fraction: f64,
    /// Within-class standard deviation.
    pub cluster_spread: f64,
    /// Radius of the hypersphere the class means are drawn on. Smaller radii
    /// create confusable class pairs.
    pub separation: f64,
    /// Foreground test samples per class (equal across classes).
    pub test_per_class: usize,
    pub groups: FrequencyGroups,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 30,
            feature_dim: 16,
            zipf_exponent: 1.2,
            max_count: 1000,
            min_count: 5,
            background_fraction: 0.25,
            cluster_spread: 0.9,
            separation: 3.0,
            test_per_class: 20,
            groups: FrequencyGroups {
                rare_max: 30,
                common_max: 100,
            },
            seed: 42,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> DataError {
            DataError::InvalidSpec {
                field,
                reason: reason.into(),
            }
        }
        if self.num_classes == 0 {
            return Err(bad("num_classes", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(bad("feature_dim", "must be positive"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(bad("zipf_exponent", "must be finite and non-negative"));
        }
        if self.min_count == 0 {
            return Err(bad("min_count", "must be at least 1"));
        }
        if self.max_count < self.min_count {
            return Err(bad(
                "max_count",
                format!("must be at least min_count={}", self.min_count),
            ));
        }
        if !(self.background_fraction >= 0.0 && self.background_fraction < 1.0) {
            return Err(bad("background_fraction", "must be in [0, 1)"));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(bad("cluster_spread", "must be positive"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(bad("separation", "must be finite and non-negative"));
        }
        if self.test_per_class == 0 {
            return Err(bad("test_per_class", "would produce zero test samples"));
        }
        self.groups.validate()
    }
}

/// One split of samples: row-major features and parallel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<SampleLabel>,
}

impl SampleSet {
    fn with_capacity(feature_dim: usize, n: usize) -> Self {
        Self {
            feature_dim,
            features: Vec::with_capacity(n * feature_dim),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features_of(&self, index: usize) -> &[f64] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }
}

/// A generated long-tail dataset: training split, class-balanced test split,
/// per-class counts, and frequency groups.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailDataset {
    pub spec: DatasetSpec,
    pub class_counts: Vec<u64>,
    pub group_of: Vec<FreqGroup>,
    pub train: SampleSet,
    pub test: SampleSet,
}

/// Per-class sample counts: class at rank r (1-based) receives
/// `max(min_count, round(max_count / r^s))`, non-increasing in r.
pub fn generate_counts(spec: &DatasetSpec) -> Vec<u64> {
    (1..=spec.num_classes)
        .map(|rank| {
            let raw = spec.max_count as f64 / (rank as f64).powf(spec.zipf_exponent);
            (raw.round() as u64).max(spec.min_count)
        })
        .collect()
}

/// Thresholded frequency-group assignment for each class count.
pub fn assign_groups(class_counts: &[u64], groups: &FrequencyGroups) -> Vec<FreqGroup> {
    class_counts.iter().map(|&c| groups.group_of(c)).collect()
}

/// Fraction of background samples whose negative contribution reaches a
/// class's classifier during stage-2 fine-tuning, balancing the negative
/// pressure on rarely-activated classifiers.
pub fn background_retention(group: FreqGroup) -> f64 {
    match group {
        FreqGroup::Rare => 0.01,
        FreqGroup::Common => 0.10,
        FreqGroup::Frequent => 1.0,
    }
}

/// Deterministic per-(epoch, sample, class) retention draws. Decisions are
/// redrawn every epoch and are independent of iteration order.
#[derive(Debug, Clone)]
pub struct RetentionSampler {
    seed: u64,
}

impl RetentionSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed: stream_seed(seed, TAG_RETENTION, 0),
        }
    }

    pub fn keep(&self, epoch: u64, sample: u64, class: u64, prob: f64) -> bool {
        if prob >= 1.0 {
            return true;
        }
        let mut h = splitmix64(self.seed ^ splitmix64(epoch));
        h = splitmix64(h ^ sample);
        h = splitmix64(h ^ class);
        unit_from_hash(h) < prob
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn class_means(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    (0..spec.num_classes)
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, TAG_MEANS, c as u64));
            loop {
                let v = normal_vec(&mut rng, spec.feature_dim);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    return v.into_iter().map(|x| x / norm * spec.separation).collect();
                }
            }
        })
        .collect()
}

fn push_cluster_samples(
    set: &mut SampleSet,
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    spread: f64,
    label: SampleLabel,
    n: usize,
) {
    for _ in 0..n {
        for &m in mean {
            let x: f64 = StandardNormal.sample(rng);
            set.features.push(m + spread * x);
        }
        set.labels.push(label);
    }
}

fn background_count(foreground: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        0
    } else {
        (foreground as f64 * fraction / (1.0 - fraction)).round() as usize
    }
}

/// Generates the dataset described by `spec`. Class means sit on a
/// hypersphere of radius `separation`; class samples are isotropic Gaussians
/// around them; background samples come from a broad zero-mean Gaussian
/// whose typical radius matches the cluster shell. The test split is
/// disjoint by construction (independent substreams) and class-balanced.
pub fn sample_dataset(spec: &DatasetSpec) -> Result<LongTailDataset, DataError> {
    spec.validate()?;
    let class_counts = generate_counts(spec);
    let group_of = assign_groups(&class_counts, &spec.groups);
    let means = class_means(spec);
    let d = spec.feature_dim;

    let total_fg: usize = class_counts.iter().map(|&c| c as usize).sum();
    let n_bg_train = background_count(total_fg, spec.background_fraction);
    let total_fg_test = spec.test_per_class * spec.num_classes;
    let n_bg_test = background_count(total_fg_test, spec.background_fraction);

    let mut train = SampleSet::with_capacity(d, total_fg + n_bg_train);
    for (c, (&count, mean)) in class_counts.iter().zip(&means).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, TAG_TRAIN, c as u64));
        push_cluster_samples(
            &mut train,
            &mut rng,
            mean,
            spec.cluster_spread,
            SampleLabel::Foreground(c),
            count as usize,
        );
    }

    let mut test = SampleSet::with_capacity(d, total_fg_test + n_bg_test);
    for (c, mean) in means.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, TAG_TEST, c as u64));
        push_cluster_samples(
            &mut test,
            &mut rng,
            mean,
            spec.cluster_spread,
            SampleLabel::Foreground(c),
            spec.test_per_class,
        );
    }

    // Background std chosen so the typical background radius matches the
    // sphere the class means sit on: the cloud spans every cluster's
    // location while the cluster cores stay foreground-dominated.
    let bg_std = (spec.separation + spec.cluster_spread) / (d as f64).sqrt();
    let origin = vec![0.0; d];
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, TAG_BG_TRAIN, 0));
    push_cluster_samples(
        &mut train,
        &mut rng,
        &origin,
        bg_std,
        SampleLabel::Background,
        n_bg_train,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, TAG_BG_TEST, 0));
    push_cluster_samples(
        &mut test,
        &mut rng,
        &origin,
        bg_std,
        SampleLabel::Background,
        n_bg_test,
    );

    Ok(LongTailDataset {
        spec: spec.clone(),
        class_counts,
        group_of,
        train,
        test,
    })
}

impl LongTailDataset {
    /// Serializes the dataset in the columnar text format described in the
    /// module docs.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        out.push_str("#longtail-dataset v1\n");
        out.push_str(&format!(
            "#spec num_classes={} feature_dim={} zipf_exponent={} max_count={} min_count={} \
             background_fraction={} cluster_spread={} separation={} test_per_class={} \
             rare_max={} common_max={} seed={}\n",
            s.num_classes,
            s.feature_dim,
            s.zipf_exponent,
            s.max_count,
            s.min_count,
            s.background_fraction,
            s.cluster_spread,
            s.separation,
            s.test_per_class,
            s.groups.rare_max,
            s.groups.common_max,
            s.seed
        ));
        out.push_str("#columns split label group features...\n");
        for (name, set) in [("train", &self.train), ("test", &self.test)] {
            for i in 0..set.len() {
                match set.labels[i] {
                    SampleLabel::Foreground(k) => {
                        out.push_str(&format!("{name} {k} {}", self.group_of[k]));
                    }
                    SampleLabel::Background => out.push_str(&format!("{name} bg -")),
                }
                for v in set.features_of(i) {
                    out.push_str(&format!(" {v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_text()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parses the columnar text format, validating label ranges and count
    /// consistency against the embedded spec.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let corrupt = |line: usize, reason: &str| DataError::Corrupt {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines
            .next()
            .ok_or_else(|| corrupt(1, "missing magic line"))?;
        if magic.trim() != "#longtail-dataset v1" {
            return Err(corrupt(1, "unrecognized magic line"));
        }
        let (_, spec_line) = lines
            .next()
            .ok_or_else(|| corrupt(2, "missing spec line"))?;
        let spec = parse_spec_line(spec_line)?;
        spec.validate()?;

        let mut train = SampleSet::with_capacity(spec.feature_dim, 0);
        let mut test = SampleSet::with_capacity(spec.feature_dim, 0);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let split = fields.next().ok_or_else(|| corrupt(lineno, "missing split"))?;
            let label_str = fields.next().ok_or_else(|| corrupt(lineno, "missing label"))?;
            let _group = fields.next().ok_or_else(|| corrupt(lineno, "missing group"))?;
            let label = if label_str == "bg" {
                SampleLabel::Background
            } else {
                let k: usize = label_str
                    .parse()
                    .map_err(|_| corrupt(lineno, "bad class index"))?;
                if k >= spec.num_classes {
                    return Err(corrupt(lineno, "class index out of range"));
                }
                SampleLabel::Foreground(k)
            };
            let set = match split {
                "train" => &mut train,
                "test" => &mut test,
                _ => return Err(corrupt(lineno, "split must be `train` or `test`")),
            };
            let mut n = 0;
            for f in fields {
                let v: f64 = f.parse().map_err(|_| corrupt(lineno, "bad feature value"))?;
                set.features.push(v);
                n += 1;
            }
            if n != spec.feature_dim {
                return Err(corrupt(lineno, "wrong feature count"));
            }
            set.labels.push(label);
        }

        let class_counts = generate_counts(&spec);
        let mut observed = vec![0u64; spec.num_classes];
        for label in &train.labels {
            if let SampleLabel::Foreground(k) = label {
                observed[*k] += 1;
            }
        }
        if observed != class_counts {
            return Err(DataError::Corrupt {
                line: 0,
                reason: "train labels disagree with the spec's class counts".into(),
            });
        }
        let group_of = assign_groups(&class_counts, &spec.groups);
        Ok(LongTailDataset {
            spec,
            class_counts,
            group_of,
            train,
            test,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, DataError> {
    value.parse().map_err(|_| DataError::Corrupt {
        line: 2,
        reason: format!("bad value for `{key}`"),
    })
}

fn parse_spec_line(line: &str) -> Result<DatasetSpec, DataError> {
    let corrupt = |reason: String| DataError::Corrupt { line: 2, reason };
    let rest = line
        .strip_prefix("#spec")
        .ok_or_else(|| corrupt("missing #spec prefix".into()))?;
    let mut spec = DatasetSpec::default();
    for pair in rest.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| corrupt(format!("malformed pair `{pair}`")))?;
        match key {
            "num_classes" => spec.num_classes = parse_field(key, value)?,
            "feature_dim" => spec.feature_dim = parse_field(key, value)?,
            "zipf_exponent" => spec.zipf_exponent = parse_field(key, value)?,
            "max_count" => spec.max_count = parse_field(key, value)?,
            "min_count" => spec.min_count = parse_field(key, value)?,
            "background_fraction" => spec.background_fraction = parse_field(key, value)?,
            "cluster_spread" => spec.cluster_spread = parse_field(key, value)?,
            "separation" => spec.separation = parse_field(key, value)?,
            "test_per_class" => spec.test_per_class = parse_field(key, value)?,
            "rare_max" => spec.groups.rare_max = parse_field(key, value)?,
            "common_max" => spec.groups.common_max = parse_field(key, value)?,
            "seed" => spec.seed = parse_field(key, value)?,
            _ => return Err(corrupt(format!("unknown spec key `{key}`"))),
        }
    }
    Ok(spec)
}
