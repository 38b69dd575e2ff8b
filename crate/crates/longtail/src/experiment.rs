//! Experiment driver: seeded single runs, suppression-threshold and
//! partition sweeps, and side-by-side loss comparisons. Every run writes a
//! self-describing output directory and identical configs reproduce
//! byte-identical files.
//!
//! # Output layout
//!
//! ```text
//! <output>/
//!   config.toml            resolved config, defaults included
//!   combined.tsv           one row per sweep point (run verb)
//!   comparison.tsv         one row per loss with deltas (compare verb)
//!   runs/<name>/
//!     report.tsv           per-class APs plus the summary block
//!     report.json          the same report, machine readable
//!     train_log.tsv        per-epoch loss and learning rate
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::GroupPartition;
use crate::data::{generate_counts, sample_dataset, DatasetSpec, LongTailDataset};
use crate::error::{DataError, ExperimentError, TrainError};
use crate::family::{LossFamily, ResolvedLoss};
use crate::metrics::{group_report, GroupReport, PerClassScores};
use crate::train::{
    score_split, train_single_stage, train_two_stage, MlpClassifier, TrainConfig, TrainingLog,
    TwoStageSchedule,
};
use crate::types::AcslConfig;

/// Whether a loss trains end-to-end or rides the decoupled two-stage
/// schedule (stage 2 fine-tunes the classifier only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    TwoStage,
    EndToEnd,
}

/// A loss family plus its training mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossChoice {
    #[serde(flatten)]
    pub family: LossFamily,
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
}

fn default_mode() -> TrainMode {
    TrainMode::TwoStage
}

impl LossChoice {
    pub fn slug(&self) -> String {
        match self.mode {
            TrainMode::TwoStage => self.family.slug(),
            TrainMode::EndToEnd => format!("{}-e2e", self.family.slug()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden_dim: 32 }
    }
}

/// Stage-2 knobs; optimizer settings are inherited from stage 1 with the
/// base learning rate scaled by `lr_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageTwoConfig {
    pub epochs: usize,
    pub lr_scale: f64,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr_scale: 1.0,
        }
    }
}

/// Sweep axis: none, a list of suppression thresholds, or a list of single
/// partition dividing lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepConfig {
    #[default]
    None,
    Xi {
        values: Vec<f64>,
    },
    Partition {
        thresholds: Vec<u64>,
    },
}

/// Complete experiment description. Every field has a default, and the
/// resolved config (including the stamped seeds) is written back into the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; stamped into the dataset spec and both stages.
    pub seed: u64,
    pub output: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: StageTwoConfig,
    pub loss: LossChoice,
    pub sweep: SweepConfig,
    /// Losses for the compare verb; deltas are reported against the first.
    pub compare: Vec<LossChoice>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output: PathBuf::from("longtail-out"),
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            stage1: TrainConfig::default(),
            stage2: StageTwoConfig::default(),
            loss: LossChoice {
                family: LossFamily::Acsl { xi: 0.7 },
                mode: TrainMode::TwoStage,
            },
            sweep: SweepConfig::None,
            compare: vec![
                LossChoice {
                    family: LossFamily::Bce,
                    mode: TrainMode::EndToEnd,
                },
                LossChoice {
                    family: LossFamily::Acsl { xi: 0.7 },
                    mode: TrainMode::TwoStage,
                },
            ],
        }
    }
}

fn config_err(field: impl Into<String>, reason: impl ToString) -> ExperimentError {
    ExperimentError::Config {
        field: field.into(),
        reason: reason.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| config_err("<config>", e))
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Applies CLI overrides and stamps the master seed into the dataset and
    /// training configs, making the config fully self-describing.
    pub fn resolved(mut self, seed: Option<u64>, output: Option<PathBuf>) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(output) = output {
            self.output = output;
        }
        self.dataset.seed = self.seed;
        self.stage1.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.dataset.validate().map_err(|e| match e {
            DataError::InvalidSpec { field, reason } => {
                config_err(format!("dataset.{field}"), reason)
            }
            other => other.into(),
        })?;
        if self.model.hidden_dim == 0 {
            return Err(config_err("model.hidden_dim", "must be positive"));
        }
        let map_stage = |stage: &'static str| {
            move |e: TrainError| match e {
                TrainError::InvalidConfig { field, reason } => {
                    config_err(format!("{stage}.{field}"), reason)
                }
                other => other.into(),
            }
        };
        self.stage1.validate().map_err(map_stage("stage1"))?;
        if !(self.stage2.lr_scale.is_finite() && self.stage2.lr_scale > 0.0) {
            return Err(config_err("stage2.lr_scale", "must be positive"));
        }
        let derived = TwoStageSchedule::derived(
            self.stage1.clone(),
            self.loss.family.clone(),
            self.stage2.epochs,
            self.stage2.lr_scale,
        );
        if derived.stage2.epochs > 0 {
            derived.stage2.validate().map_err(map_stage("stage2"))?;
        }

        let counts = generate_counts(&self.dataset);
        let check_choice = |choice: &LossChoice, field: String| {
            ResolvedLoss::resolve(&choice.family, &counts)
                .map(|_| ())
                .map_err(|e| config_err(field, e))
        };
        check_choice(&self.loss, "loss".into())?;
        for (i, choice) in self.compare.iter().enumerate() {
            check_choice(choice, format!("compare[{i}]"))?;
        }

        match &self.sweep {
            SweepConfig::None => {}
            SweepConfig::Xi { values } => {
                if values.is_empty() {
                    return Err(config_err("sweep.values", "sweep list is empty"));
                }
                if !matches!(self.loss.family, LossFamily::Acsl { .. }) {
                    return Err(config_err(
                        "sweep.axis",
                        "a xi sweep requires loss.family = \"acsl\"",
                    ));
                }
                for &v in values {
                    AcslConfig::new(v).map_err(|e| config_err("sweep.values", e))?;
                }
            }
            SweepConfig::Partition { thresholds } => {
                if thresholds.is_empty() {
                    return Err(config_err("sweep.thresholds", "sweep list is empty"));
                }
                if !matches!(self.loss.family, LossFamily::GroupSoftmax { .. }) {
                    return Err(config_err(
                        "sweep.axis",
                        "a partition sweep requires loss.family = \"group_softmax\"",
                    ));
                }
                for &t in thresholds {
                    GroupPartition::from_counts(&counts, &[t]).map_err(|e| {
                        config_err("sweep.thresholds", format!("dividing line {t}: {e}"))
                    })?;
                }
            }
        }
        Ok(())
    }
}

/// One executed training run and where its report lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    /// The sweep value this point belongs to, if the run is part of a sweep.
    pub sweep_value: Option<f64>,
    pub report: GroupReport,
    /// Report path relative to the output directory.
    pub report_path: PathBuf,
}

/// Everything `run` or `compare` produced, in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output: PathBuf,
    pub results: Vec<RunResult>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let io_err = |source: io::Error| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn train_choice(
    dataset: &LongTailDataset,
    config: &ExperimentConfig,
    choice: &LossChoice,
) -> Result<(MlpClassifier, TrainingLog, ResolvedLoss), ExperimentError> {
    let resolved = ResolvedLoss::resolve(&choice.family, &dataset.class_counts)
        .map_err(TrainError::from)?;
    let (model, log) = match choice.mode {
        TrainMode::TwoStage => {
            let sched = TwoStageSchedule::derived(
                config.stage1.clone(),
                choice.family.clone(),
                config.stage2.epochs,
                config.stage2.lr_scale,
            );
            train_two_stage(dataset, &sched, config.model.hidden_dim)?
        }
        TrainMode::EndToEnd => {
            train_single_stage(dataset, &config.stage1, &choice.family, config.model.hidden_dim)?
        }
    };
    Ok((model, log, resolved))
}

/// Trains and evaluates one dataset/loss pair in memory, without touching
/// the filesystem.
pub fn evaluate_choice(
    dataset: &LongTailDataset,
    config: &ExperimentConfig,
    choice: &LossChoice,
) -> Result<GroupReport, ExperimentError> {
    let (model, _, resolved) = train_choice(dataset, config, choice)?;
    let scores = score_split(&model, &resolved, &dataset.test)?;
    let pcs = PerClassScores::from_scores(
        &scores,
        &dataset.test.labels,
        dataset.spec.num_classes,
    );
    Ok(group_report(
        &pcs.average_precisions(),
        &dataset.group_of,
        resolved.score_source(),
    ))
}

fn run_point(
    config: &ExperimentConfig,
    name: &str,
    sweep_value: Option<f64>,
    choice: &LossChoice,
) -> Result<RunResult, ExperimentError> {
    let dataset = sample_dataset(&config.dataset)?;
    let (model, log, resolved) = train_choice(&dataset, config, choice)?;
    let scores = score_split(&model, &resolved, &dataset.test)?;
    let pcs = PerClassScores::from_scores(
        &scores,
        &dataset.test.labels,
        dataset.spec.num_classes,
    );
    let report = group_report(
        &pcs.average_precisions(),
        &dataset.group_of,
        resolved.score_source(),
    );

    let rel_dir = PathBuf::from("runs").join(name);
    let dir = config.output.join(&rel_dir);
    create_dir(&dir)?;
    write_atomic(&dir.join("report.tsv"), &report.to_tsv())?;
    write_atomic(&dir.join("report.json"), &report.to_json())?;
    write_atomic(&dir.join("train_log.tsv"), &log.to_tsv())?;
    Ok(RunResult {
        name: name.to_string(),
        sweep_value,
        report,
        report_path: rel_dir.join("report.tsv"),
    })
}

fn execute(
    config: &ExperimentConfig,
    points: &[(String, Option<f64>, LossChoice)],
    jobs: usize,
) -> Result<Vec<RunResult>, ExperimentError> {
    if jobs <= 1 {
        points
            .iter()
            .map(|(name, value, choice)| run_point(config, name, *value, choice))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| config_err("jobs", e))?;
        pool.install(|| {
            points
                .par_iter()
                .map(|(name, value, choice)| run_point(config, name, *value, choice))
                .collect()
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "absent".to_string(),
    }
}

fn fmt_delta(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!("{:+.6}", a - b),
        _ => "absent".to_string(),
    }
}

/// Runs the configured loss once, or once per sweep point, writing one
/// report per run plus a combined table sorted by sweep value.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunSummary, ExperimentError> {
    config.validate()?;
    create_dir(&config.output)?;
    write_atomic(&config.output.join("config.toml"), &config.to_toml())?;

    let points: Vec<(String, Option<f64>, LossChoice)> = match &config.sweep {
        SweepConfig::None => vec![(config.loss.slug(), None, config.loss.clone())],
        SweepConfig::Xi { values } => {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            sorted
                .into_iter()
                .map(|xi| {
                    (
                        format!("xi-{xi}"),
                        Some(xi),
                        LossChoice {
                            family: LossFamily::Acsl { xi },
                            mode: config.loss.mode,
                        },
                    )
                })
                .collect()
        }
        SweepConfig::Partition { thresholds } => {
            let mut sorted = thresholds.clone();
            sorted.sort_unstable();
            sorted
                .into_iter()
                .map(|t| {
                    (
                        format!("thr-{t}"),
                        Some(t as f64),
                        LossChoice {
                            family: LossFamily::GroupSoftmax {
                                thresholds: vec![t],
                            },
                            mode: config.loss.mode,
                        },
                    )
                })
                .collect()
        }
    };

    let results = execute(config, &points, jobs)?;

    let mut table = String::from("point\tm_ap\tap_r\tap_c\tap_f\treport\n");
    for r in &results {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.name,
            fmt_opt(r.report.m_ap),
            fmt_opt(r.report.ap_rare),
            fmt_opt(r.report.ap_common),
            fmt_opt(r.report.ap_frequent),
            r.report_path.display()
        ));
    }
    write_atomic(&config.output.join("combined.tsv"), &table)?;
    Ok(RunSummary {
        output: config.output.clone(),
        results,
    })
}

/// Trains every listed loss on the same dataset and seed, reporting each
/// group AP alongside its delta against the first listed loss.
pub fn compare(config: &ExperimentConfig, jobs: usize) -> Result<RunSummary, ExperimentError> {
    config.validate()?;
    if config.compare.len() < 2 {
        return Err(config_err("compare", "need at least two losses to compare"));
    }
    create_dir(&config.output)?;
    write_atomic(&config.output.join("config.toml"), &config.to_toml())?;

    let points: Vec<(String, Option<f64>, LossChoice)> = config
        .compare
        .iter()
        .enumerate()
        .map(|(i, choice)| (format!("{i}-{}", choice.slug()), None, choice.clone()))
        .collect();
    let results = execute(config, &points, jobs)?;

    let base = &results[0].report;
    let mut table =
        String::from("loss\tm_ap\tap_r\tap_c\tap_f\td_m_ap\td_ap_r\td_ap_c\td_ap_f\treport\n");
    for r in &results {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.name,
            fmt_opt(r.report.m_ap),
            fmt_opt(r.report.ap_rare),
            fmt_opt(r.report.ap_common),
            fmt_opt(r.report.ap_frequent),
            fmt_delta(r.report.m_ap, base.m_ap),
            fmt_delta(r.report.ap_rare, base.ap_rare),
            fmt_delta(r.report.ap_common, base.ap_common),
            fmt_delta(r.report.ap_frequent, base.ap_frequent),
            r.report_path.display()
        ));
    }
    write_atomic(&config.output.join("comparison.tsv"), &table)?;
    Ok(RunSummary {
        output: config.output.clone(),
        results,
    })
}

/// Exports the configured dataset in the columnar text format.
pub fn gen_data(config: &ExperimentConfig, out_file: &Path) -> Result<(), ExperimentError> {
    config.validate()?;
    let dataset = sample_dataset(&config.dataset)?;
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    dataset.write_to(out_file)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrequencyGroups;

    fn tiny_config(output: PathBuf) -> ExperimentConfig {
        let mut config = ExperimentConfig::default().resolved(Some(7), Some(output));
        config.dataset = DatasetSpec {
            num_classes: 5,
            feature_dim: 4,
            zipf_exponent: 1.0,
            max_count: 30,
            min_count: 3,
            background_fraction: 0.2,
            cluster_spread: 0.8,
            separation: 2.5,
            test_per_class: 4,
            groups: FrequencyGroups::new(8, 20).unwrap(),
            seed: 7,
        };
        config.model.hidden_dim = 6;
        config.stage1.epochs = 2;
        config.stage1.warmup_iters = 3;
        config.stage1.decay_milestones = vec![];
        config.stage2.epochs = 1;
        config
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let config = ExperimentConfig::default();
        let text = config.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);

        // minimal config: everything defaulted
        let minimal = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(minimal, ExperimentConfig::default());

        // loss selection with parameters
        let text = "[loss]\nfamily = \"acsl\"\nxi = 0.3\nmode = \"two_stage\"\n";
        let parsed = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(parsed.loss.family, LossFamily::Acsl { xi: 0.3 });
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut config = ExperimentConfig::default();
        config.dataset.cluster_spread = 0.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("dataset.cluster_spread"), "{err}");

        let mut config = ExperimentConfig::default();
        config.loss.family = LossFamily::Acsl { xi: 2.0 };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("loss"), "{err}");

        let mut config = ExperimentConfig::default();
        config.sweep = SweepConfig::Xi { values: vec![] };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("sweep.values"), "{err}");

        let mut config = ExperimentConfig::default();
        config.loss.family = LossFamily::Bce;
        config.sweep = SweepConfig::Xi { values: vec![0.5] };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("sweep.axis"), "{err}");
    }

    #[test]
    fn unknown_toml_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[model]\nhidden = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn single_run_writes_reports_and_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let out_a = tmp.path().join("a");
        let out_b = tmp.path().join("b");

        let summary = run(&tiny_config(out_a.clone()), 1).unwrap();
        assert_eq!(summary.results.len(), 1);
        let name = &summary.results[0].name;
        for file in ["config.toml", "combined.tsv"] {
            assert!(out_a.join(file).exists(), "{file}");
        }
        for file in ["report.tsv", "report.json", "train_log.tsv"] {
            assert!(out_a.join("runs").join(name).join(file).exists(), "{file}");
        }

        run(&tiny_config(out_b.clone()), 1).unwrap();
        let read = |dir: &Path, rel: &str| fs::read(dir.join(rel)).unwrap();
        for rel in [
            "combined.tsv",
            &format!("runs/{name}/report.tsv"),
            &format!("runs/{name}/report.json"),
            &format!("runs/{name}/train_log.tsv"),
        ] {
            assert_eq!(read(&out_a, rel), read(&out_b, rel), "{rel} differs");
        }
    }

    #[test]
    fn sweep_produces_sorted_points_and_parallel_matches_serial() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = tiny_config(tmp.path().join("serial"));
        config.sweep = SweepConfig::Xi {
            values: vec![0.7, 0.1],
        };
        let serial = run(&config, 1).unwrap();
        assert_eq!(serial.results.len(), 2);
        assert_eq!(serial.results[0].name, "xi-0.1");
        assert_eq!(serial.results[1].name, "xi-0.7");

        let mut config2 = config.clone();
        config2.output = tmp.path().join("parallel");
        let parallel = run(&config2, 2).unwrap();
        assert_eq!(
            fs::read(config.output.join("combined.tsv")).unwrap(),
            fs::read(config2.output.join("combined.tsv")).unwrap()
        );
        assert_eq!(serial.results[0].report, parallel.results[0].report);
    }

    #[test]
    fn compare_with_itself_has_zero_deltas() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = tiny_config(tmp.path().join("cmp"));
        let choice = LossChoice {
            family: LossFamily::Bce,
            mode: TrainMode::TwoStage,
        };
        config.compare = vec![choice.clone(), choice];
        let summary = compare(&config, 1).unwrap();
        assert_eq!(summary.results[0].report, summary.results[1].report);
        let table = fs::read_to_string(config.output.join("comparison.tsv")).unwrap();
        let last = table.lines().last().unwrap();
        assert!(last.contains("+0.000000"), "{last}");
    }

    #[test]
    fn compare_requires_two_losses() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = tiny_config(tmp.path().join("cmp1"));
        config.compare.truncate(1);
        let err = compare(&config, 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn gen_data_roundtrips() {
        let tmp = tempfile::tempdir().unwrap();
        let config = tiny_config(tmp.path().join("gd"));
        let file = tmp.path().join("data.txt");
        gen_data(&config, &file).unwrap();
        let back = LongTailDataset::read_from(&file).unwrap();
        assert_eq!(back, sample_dataset(&config.dataset).unwrap());
    }
}
