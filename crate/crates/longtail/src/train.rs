//! Mini-batch SGD with momentum, linear warmup, step decay, manual
//! backpropagation through a one-hidden-layer ReLU classifier, and the
//! decoupled two-stage schedule (representation first, classifier-only
//! fine-tuning second).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{background_retention, LongTailDataset, RetentionSampler, SampleSet};
use crate::error::{LossError, TrainError};
use crate::family::{LossFamily, ResolvedLoss};
use crate::matrix::Matrix;
use crate::seeding::stream_seed;
use crate::types::{LogitVector, SampleLabel, WeightMask};

const TAG_INIT: u64 = 0x494e;
const TAG_SHUFFLE: u64 = 0x5348;

/// Optimizer and schedule settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear warmup length in iterations.
    pub warmup_iters: usize,
    /// The warmup ramp starts at `base_lr * warmup_start_ratio`.
    pub warmup_start_ratio: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_iters: 100,
            warmup_start_ratio: 1.0 / 3.0,
            decay_milestones: vec![8, 11],
            decay_factor: 0.1,
            epochs: 12,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> TrainError {
            TrainError::InvalidConfig {
                field,
                reason: reason.into(),
            }
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(bad("base_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        if !(self.warmup_start_ratio > 0.0 && self.warmup_start_ratio <= 1.0) {
            return Err(bad("warmup_start_ratio", "must be in (0, 1]"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(bad("decay_factor", "must be in (0, 1)"));
        }
        if self
            .decay_milestones
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(bad("decay_milestones", "must be strictly increasing"));
        }
        if self.decay_milestones.iter().any(|&m| m >= self.epochs) && self.epochs > 0 {
            return Err(bad("decay_milestones", "must all precede the last epoch"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at a stage-local iteration: a linear ramp from
/// `base_lr * warmup_start_ratio` to `base_lr` over `warmup_iters`, then
/// `base_lr * decay_factor^(milestones passed)`.
pub fn lr_at(iter: usize, epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_iters > 0 && iter < cfg.warmup_iters {
        let t = iter as f64 / cfg.warmup_iters as f64;
        cfg.base_lr * (cfg.warmup_start_ratio + (1.0 - cfg.warmup_start_ratio) * t)
    } else {
        let passed = cfg
            .decay_milestones
            .iter()
            .filter(|&&m| epoch >= m)
            .count();
        cfg.base_lr * cfg.decay_factor.powi(passed as i32)
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "params {}, grads {}, velocity {}",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient { iteration: 0 });
        }
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Shared ReLU representation layer plus a linear classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub output_w: Matrix,
    pub output_b: Vec<f64>,
}

pub struct ForwardPass {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl MlpClassifier {
    /// He-initialized hidden layer, 1/sqrt(h)-scaled head, zero biases.
    pub fn init(feature_dim: usize, hidden_dim: usize, head_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, TAG_INIT, 0));
        let hs = (2.0 / feature_dim as f64).sqrt();
        let hidden_w = Matrix::from_fn(hidden_dim, feature_dim, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            hs * x
        });
        let os = (1.0 / hidden_dim as f64).sqrt();
        let output_w = Matrix::from_fn(head_len, hidden_dim, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            os * x
        });
        Self {
            hidden_w,
            hidden_b: vec![0.0; hidden_dim],
            output_w,
            output_b: vec![0.0; head_len],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden_w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_w.rows()
    }

    pub fn head_len(&self) -> usize {
        self.output_w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> ForwardPass {
        let h = self.hidden_dim();
        let mut hidden_pre = vec![0.0; h];
        self.hidden_w.matvec(x, &mut hidden_pre);
        for (pre, b) in hidden_pre.iter_mut().zip(&self.hidden_b) {
            *pre += b;
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = vec![0.0; self.head_len()];
        self.output_w.matvec(&hidden, &mut logits);
        for (z, b) in logits.iter_mut().zip(&self.output_b) {
            *z += b;
        }
        ForwardPass {
            hidden_pre,
            hidden,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }
}

/// Gradients (or momentum state) with the same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub output_w: Matrix,
    pub output_b: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpClassifier) -> Self {
        Self {
            hidden_w: Matrix::zeros(model.hidden_dim(), model.feature_dim()),
            hidden_b: vec![0.0; model.hidden_dim()],
            output_w: Matrix::zeros(model.head_len(), model.hidden_dim()),
            output_b: vec![0.0; model.head_len()],
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.hidden_w.as_mut_slice() {
            *v *= factor;
        }
        for v in &mut self.hidden_b {
            *v *= factor;
        }
        for v in self.output_w.as_mut_slice() {
            *v *= factor;
        }
        for v in &mut self.output_b {
            *v *= factor;
        }
    }
}

/// Which parameters a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    AllParams,
    ClassifierOnly,
}

/// Per-class retention rates plus the deterministic per-(epoch, sample,
/// class) sampler used to gate background contributions in stage 2.
#[derive(Debug, Clone)]
pub struct RetentionPlan {
    sampler: RetentionSampler,
    rates: Vec<f64>,
}

impl RetentionPlan {
    pub fn new(dataset: &LongTailDataset, seed: u64) -> Self {
        Self {
            sampler: RetentionSampler::new(seed),
            rates: dataset
                .group_of
                .iter()
                .map(|&g| background_retention(g))
                .collect(),
        }
    }

    /// Mask for one background sample: its negative contribution to each
    /// class is kept with that class's retention rate. Foreground samples
    /// are never gated.
    pub fn background_mask(&self, epoch: u64, sample: usize) -> WeightMask {
        let weights = (0..self.rates.len())
            .map(|class| {
                if self
                    .sampler
                    .keep(epoch, sample as u64, class as u64, self.rates[class])
                {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        WeightMask::new_unchecked(weights)
    }
}

fn check_batch(
    model: &MlpClassifier,
    set: &SampleSet,
    indices: &[usize],
    loss: &ResolvedLoss,
) -> Result<(), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::ShapeMismatch("empty batch".into()));
    }
    if set.feature_dim != model.feature_dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "feature dim {} vs model input {}",
            set.feature_dim,
            model.feature_dim()
        )));
    }
    if loss.head_len() != model.head_len() {
        return Err(TrainError::ShapeMismatch(format!(
            "loss head {} vs model head {}",
            loss.head_len(),
            model.head_len()
        )));
    }
    Ok(())
}

fn sample_retain(
    loss: &ResolvedLoss,
    retention: Option<(&RetentionPlan, u64)>,
    sample: usize,
    label: SampleLabel,
) -> Option<WeightMask> {
    match (retention, label) {
        (Some((plan, epoch)), SampleLabel::Background) if loss.is_binary() => {
            Some(plan.background_mask(epoch, sample))
        }
        _ => None,
    }
}

/// Mean loss over a batch without gradients; the finite-difference oracle
/// for [`forward_backward`] differentiates this.
pub fn batch_loss(
    model: &MlpClassifier,
    set: &SampleSet,
    indices: &[usize],
    loss: &ResolvedLoss,
    retention: Option<(&RetentionPlan, u64)>,
) -> Result<f64, TrainError> {
    check_batch(model, set, indices, loss)?;
    let mut total = 0.0;
    for &i in indices {
        let pass = model.forward(set.features_of(i));
        let logits = LogitVector::new(pass.logits)?;
        let label = set.labels[i];
        let retain = sample_retain(loss, retention, i, label);
        total += loss.loss(&logits, label, retain.as_ref())?;
    }
    Ok(total / indices.len() as f64)
}

/// Mean loss and mean parameter gradients over a batch, by the chain rule
/// through the classifier head and (for [`TrainScope::AllParams`]) the ReLU
/// representation layer. Retention masks are applied per sample before
/// averaging.
pub fn forward_backward(
    model: &MlpClassifier,
    set: &SampleSet,
    indices: &[usize],
    loss: &ResolvedLoss,
    retention: Option<(&RetentionPlan, u64)>,
) -> Result<(f64, ModelGrads), TrainError> {
    forward_backward_scoped(model, set, indices, loss, retention, TrainScope::AllParams)
}

fn forward_backward_scoped(
    model: &MlpClassifier,
    set: &SampleSet,
    indices: &[usize],
    loss: &ResolvedLoss,
    retention: Option<(&RetentionPlan, u64)>,
    scope: TrainScope,
) -> Result<(f64, ModelGrads), TrainError> {
    check_batch(model, set, indices, loss)?;
    let mut grads = ModelGrads::zeros_like(model);
    let mut total = 0.0;
    let mut dhidden = vec![0.0; model.hidden_dim()];
    for &i in indices {
        let x = set.features_of(i);
        let pass = model.forward(x);
        let logits = LogitVector::new(pass.logits)?;
        let label = set.labels[i];
        let retain = sample_retain(loss, retention, i, label);
        total += loss.loss(&logits, label, retain.as_ref())?;
        let dlogits = loss.grad(&logits, label, retain.as_ref())?.into_values();

        grads.output_w.add_outer(&dlogits, &pass.hidden, 1.0);
        for (g, d) in grads.output_b.iter_mut().zip(&dlogits) {
            *g += d;
        }
        if scope == TrainScope::AllParams {
            model.output_w.matvec_t(&dlogits, &mut dhidden);
            // ReLU gate: zero where the pre-activation was non-positive
            for (d, &pre) in dhidden.iter_mut().zip(&pass.hidden_pre) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            grads.hidden_w.add_outer(&dhidden, x, 1.0);
            for (g, d) in grads.hidden_b.iter_mut().zip(&dhidden) {
                *g += d;
            }
        }
    }
    let inv = 1.0 / indices.len() as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// One row of the training log; a row is emitted per epoch with the epoch's
/// mean loss and final learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: usize,
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Training history: `# key=value` metadata plus per-epoch rows, emitted as
/// tab-delimited text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("stage\tepoch\titer\tlr\tloss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.8}\t{:.8}\n",
                r.stage, r.epoch, r.iter, r.lr, r.loss
            ));
        }
        out
    }
}

fn patch_iteration(err: TrainError, iteration: usize) -> TrainError {
    match err {
        TrainError::NonFiniteGradient { .. } => TrainError::NonFiniteGradient { iteration },
        TrainError::Loss(LossError::NonFinite { .. }) => TrainError::Diverged { iteration },
        other => other,
    }
}

fn run_stage(
    model: &mut MlpClassifier,
    set: &SampleSet,
    loss: &ResolvedLoss,
    cfg: &TrainConfig,
    scope: TrainScope,
    retention: Option<&RetentionPlan>,
    stage: usize,
    log: &mut TrainingLog,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::ShapeMismatch("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, TAG_SHUFFLE, stage as u64));
    let mut velocity = ModelGrads::zeros_like(model);
    let mut indices: Vec<usize> = (0..set.len()).collect();
    let mut iter = 0usize;
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut last_lr = lr_at(iter, epoch, cfg);
        for chunk in indices.chunks(cfg.batch_size) {
            let lr = lr_at(iter, epoch, cfg);
            let (l, grads) =
                forward_backward_scoped(model, set, chunk, loss, retention.map(|p| (p, epoch as u64)), scope)
                    .map_err(|e| patch_iteration(e, iter))?;
            if !l.is_finite() {
                return Err(TrainError::Diverged { iteration: iter });
            }
            sgd_step(
                model.output_w.as_mut_slice(),
                grads.output_w.as_slice(),
                velocity.output_w.as_mut_slice(),
                lr,
                cfg,
            )
            .map_err(|e| patch_iteration(e, iter))?;
            sgd_step(&mut model.output_b, &grads.output_b, &mut velocity.output_b, lr, cfg)
                .map_err(|e| patch_iteration(e, iter))?;
            if scope == TrainScope::AllParams {
                sgd_step(
                    model.hidden_w.as_mut_slice(),
                    grads.hidden_w.as_slice(),
                    velocity.hidden_w.as_mut_slice(),
                    lr,
                    cfg,
                )
                .map_err(|e| patch_iteration(e, iter))?;
                sgd_step(&mut model.hidden_b, &grads.hidden_b, &mut velocity.hidden_b, lr, cfg)
                    .map_err(|e| patch_iteration(e, iter))?;
            }
            epoch_loss += l;
            last_lr = lr;
            batches += 1;
            iter += 1;
        }
        log.rows.push(LogRow {
            stage,
            epoch,
            iter,
            lr: last_lr,
            loss: epoch_loss / batches as f64,
        });
    }
    Ok(())
}

/// The decoupled schedule: stage 1 trains everything with softmax
/// cross-entropy; stage 2 freezes the representation, re-initializes
/// momentum, and fine-tunes only the classifier with the chosen loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageSchedule {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage2_loss: LossFamily,
    /// Ratio of the stage-2 learning rate to stage 1's, recorded in the log.
    pub stage2_lr_scale: f64,
}

impl TwoStageSchedule {
    /// Stage 2 reuses stage 1's schedule with the base learning rate scaled
    /// by `lr_scale` and its own epoch count.
    pub fn derived(
        stage1: TrainConfig,
        stage2_loss: LossFamily,
        stage2_epochs: usize,
        lr_scale: f64,
    ) -> Self {
        let mut stage2 = stage1.clone();
        stage2.base_lr = stage1.base_lr * lr_scale;
        stage2.epochs = stage2_epochs;
        Self {
            stage1,
            stage2,
            stage2_loss,
            stage2_lr_scale: lr_scale,
        }
    }
}

/// Re-shapes the stage-1 head (classes + background) for the stage-2 loss,
/// retaining the trained weights: the binary family drops the background
/// row; the grouped softmax seeds every others slot from the background
/// row; softmax keeps the head unchanged.
fn adapt_head(model: &mut MlpClassifier, classes: usize, loss: &ResolvedLoss) {
    let rows: Vec<usize> = (0..loss.head_len()).map(|slot| slot.min(classes)).collect();
    model.output_w = model.output_w.select_rows(&rows);
    model.output_b = rows.iter().map(|&r| model.output_b[r]).collect();
}

/// Runs both stages on the dataset's training split. The hidden layer is
/// bit-identical before and after stage 2.
pub fn train_two_stage(
    dataset: &LongTailDataset,
    sched: &TwoStageSchedule,
    hidden_dim: usize,
) -> Result<(MlpClassifier, TrainingLog), TrainError> {
    let classes = dataset.spec.num_classes;
    let counts = &dataset.class_counts;
    let stage1_loss = ResolvedLoss::resolve(&LossFamily::SoftmaxCe, counts)?;
    let mut model = MlpClassifier::init(
        dataset.spec.feature_dim,
        hidden_dim,
        stage1_loss.head_len(),
        sched.stage1.seed,
    );
    let mut log = TrainingLog::default();
    log.note("stage1_loss", "softmax_ce");
    log.note("stage2_loss", sched.stage2_loss.slug());
    log.note("stage2_lr_scale", sched.stage2_lr_scale);
    run_stage(
        &mut model,
        &dataset.train,
        &stage1_loss,
        &sched.stage1,
        TrainScope::AllParams,
        None,
        1,
        &mut log,
    )?;

    let stage2_loss = ResolvedLoss::resolve(&sched.stage2_loss, counts)?;
    adapt_head(&mut model, classes, &stage2_loss);
    let retention = stage2_loss
        .is_binary()
        .then(|| RetentionPlan::new(dataset, sched.stage2.seed));
    run_stage(
        &mut model,
        &dataset.train,
        &stage2_loss,
        &sched.stage2,
        TrainScope::ClassifierOnly,
        retention.as_ref(),
        2,
        &mut log,
    )?;
    Ok((model, log))
}

/// Single-stage end-to-end training with the given loss; no retention
/// subsampling (that is a stage-2 mechanism).
pub fn train_single_stage(
    dataset: &LongTailDataset,
    cfg: &TrainConfig,
    loss_family: &LossFamily,
    hidden_dim: usize,
) -> Result<(MlpClassifier, TrainingLog), TrainError> {
    let loss = ResolvedLoss::resolve(loss_family, &dataset.class_counts)?;
    let mut model = MlpClassifier::init(
        dataset.spec.feature_dim,
        hidden_dim,
        loss.head_len(),
        cfg.seed,
    );
    let mut log = TrainingLog::default();
    log.note("loss", loss_family.slug());
    run_stage(
        &mut model,
        &dataset.train,
        &loss,
        cfg,
        TrainScope::AllParams,
        None,
        1,
        &mut log,
    )?;
    Ok((model, log))
}

/// Per-class confidence of every sample in a split, under the loss's score
/// semantics. Rows follow the split's sample order.
pub fn score_split(
    model: &MlpClassifier,
    loss: &ResolvedLoss,
    set: &SampleSet,
) -> Result<Vec<Vec<f64>>, TrainError> {
    if set.feature_dim != model.feature_dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "feature dim {} vs model input {}",
            set.feature_dim,
            model.feature_dim()
        )));
    }
    (0..set.len())
        .map(|i| {
            let logits = LogitVector::new(model.logits(set.features_of(i)))?;
            Ok(loss.class_scores(&logits)?)
        })
        .collect()
}
