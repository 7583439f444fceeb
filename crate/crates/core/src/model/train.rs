use ndarray::{Array2, ArrayView2, ArrayViewMut1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{batch_loss_and_gradient, LinearClassifier, LogitMode};
use crate::dataset::{Episode, FeatureDataset};
use crate::error::{Error, Result};
use crate::normalize::{self, Cadence, NormalizationConfig, VarianceBalancing};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `weight_decay * theta` added to the gradient.
    #[default]
    L2Decay,
    /// `l1_coefficient * sign(theta)` added to the gradient.
    L1,
    None,
}

/// SGD-with-momentum settings shared by pretraining, fine-tuning and the
/// affine stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    /// `None` trains on the full batch every step.
    pub batch_size: Option<usize>,
    pub regularizer: Regularizer,
    pub l1_coefficient: f64,
    pub seed: u64,
    /// Steps at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    /// Std of the Gaussian initializer; `None` means `1/sqrt(d)`.
    pub init_std: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::finetune(5)
    }
}

impl TrainConfig {
    /// Fine-tuning defaults: momentum 0.9, weight decay 5e-4, 500 full-batch
    /// iterations, learning rate 0.005 / 0.003 / 0.001 for 1 / 5 / 10 shots.
    pub fn finetune(shot: usize) -> Self {
        Self {
            learning_rate: finetune_lr(shot),
            momentum: 0.9,
            weight_decay: 5e-4,
            iterations: 500,
            batch_size: None,
            regularizer: Regularizer::L2Decay,
            l1_coefficient: 0.0,
            seed: 0,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            init_std: None,
        }
    }

    /// Pretraining defaults: learning rate 0.1 decayed by 0.1 two thirds of
    /// the way through, momentum 0.9, weight decay 5e-4, batches of 60.
    pub fn pretrain() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            iterations: 3000,
            batch_size: Some(60),
            regularizer: Regularizer::L2Decay,
            l1_coefficient: 0.0,
            seed: 0,
            lr_milestones: vec![2000],
            lr_decay: 0.1,
            init_std: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.l1_coefficient < 0.0 {
            return Err(Error::InvalidConfig("regularization coefficients must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| step >= m).count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// Fine-tuning learning rate by shot count, taking the nearest tabulated
/// shot at or below `shot`.
pub(crate) fn finetune_lr(shot: usize) -> f64 {
    match shot {
        0..=4 => 0.005,
        5..=9 => 0.003,
        _ => 0.001,
    }
}

/// Momentum buffers plus the step counter driving the learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    velocity: Array2<f64>,
    steps: usize,
}

impl SgdState {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            velocity: Array2::zeros(shape),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn velocity(&self) -> &Array2<f64> {
        &self.velocity
    }
}

/// One in-place update on a parameter vector.
pub(crate) fn sgd_update(
    mut param: ArrayViewMut1<'_, f64>,
    mut velocity: ArrayViewMut1<'_, f64>,
    grad: ndarray::ArrayView1<'_, f64>,
    cfg: &TrainConfig,
    lr: f64,
) {
    Zip::from(&mut param)
        .and(&mut velocity)
        .and(&grad)
        .for_each(|w, v, &g| {
            let reg = match cfg.regularizer {
                Regularizer::L2Decay => cfg.weight_decay * *w,
                Regularizer::L1 => cfg.l1_coefficient * sign(*w),
                Regularizer::None => 0.0,
            };
            *v = cfg.momentum * *v + g + reg;
            *w -= lr * *v;
        });
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `v <- momentum * v + grad + reg(theta)`, `theta <- theta - lr * v`.
/// Columns with `frozen[i] == true` are skipped entirely, velocity included.
pub fn sgd_step(
    clf: &mut LinearClassifier,
    grad: &Array2<f64>,
    state: &mut SgdState,
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
) -> Result<()> {
    if grad.dim() != clf.weights.dim() || state.velocity.dim() != clf.weights.dim() {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?}, gradient {:?}, velocity {:?}",
            clf.weights.dim(),
            grad.dim(),
            state.velocity.dim()
        )));
    }
    if let Some(mask) = frozen {
        if mask.len() != clf.class_count() {
            return Err(Error::ShapeMismatch("column mask length".into()));
        }
    }
    let lr = cfg.learning_rate_at(state.steps);
    for (i, ((w, v), g)) in clf
        .weights
        .axis_iter_mut(Axis(1))
        .zip(state.velocity.axis_iter_mut(Axis(1)))
        .zip(grad.axis_iter(Axis(1)))
        .enumerate()
    {
        if frozen.is_some_and(|m| m[i]) {
            continue;
        }
        sgd_update(w, v, g, cfg, lr);
    }
    state.steps += 1;
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("init std {std}: {e}")))?;
    Ok(Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng)))
}

fn default_std(dim: usize, configured: Option<f64>) -> f64 {
    configured.unwrap_or(1.0 / (dim as f64).sqrt())
}

/// Linear probe over base classes: Gaussian initialization, then mini-batch
/// SGD over seeded shuffled epochs.
pub fn train_base(base: &FeatureDataset, cfg: &TrainConfig) -> Result<LinearClassifier> {
    cfg.validate()?;
    if base.is_empty() {
        return Err(Error::InvalidConfig("empty base dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = base.dim();
    let c = base.class_count();
    let weights = gaussian_matrix(dim, c, default_std(dim, cfg.init_std), &mut rng)?;
    let mut clf = LinearClassifier::from_weights(weights, base.classes().to_vec())?;

    let x = base.feature_matrix();
    let index = clf.column_index();
    let labels: Vec<usize> = base.samples().iter().map(|s| index[&s.label]).collect();
    let batch = cfg.batch_size.unwrap_or(labels.len()).min(labels.len());

    let mut state = SgdState::new(clf.weights.dim());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut cursor = order.len();
    for _ in 0..cfg.iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let xb = x.select(Axis(0), idx);
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (_, grad) = batch_loss_and_gradient(clf.weights.view(), xb.view(), &yb, LogitMode::Linear);
        sgd_step(&mut clf, &grad, &mut state, cfg, None)?;
    }
    clf.check_finite()?;
    Ok(clf)
}

/// Appends one column per novel class drawn from `N(0, 1/d)`.
pub fn extend_classifier(clf: &LinearClassifier, novel_class_ids: &[u32], seed: u64) -> Result<LinearClassifier> {
    extend_classifier_with_std(clf, novel_class_ids, seed, 1.0 / (clf.dim() as f64).sqrt())
}

pub fn extend_classifier_with_std(
    clf: &LinearClassifier,
    novel_class_ids: &[u32],
    seed: u64,
    std: f64,
) -> Result<LinearClassifier> {
    if clf.novel_class_count > 0 {
        return Err(Error::AlreadyExtended(clf.novel_class_count));
    }
    if novel_class_ids.is_empty() {
        return Err(Error::NothingToExtend);
    }
    if let Some(c) = novel_class_ids.iter().find(|c| clf.class_map.contains(c)) {
        return Err(Error::InvalidPartition(format!("class {c} is already a base class")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let novel = gaussian_matrix(clf.dim(), novel_class_ids.len(), std, &mut rng)?;
    let weights = ndarray::concatenate(Axis(1), &[clf.weights.view(), novel.view()])
        .expect("row counts agree");
    let mut class_map = clf.class_map.clone();
    class_map.extend_from_slice(novel_class_ids);
    LinearClassifier::with_partition(weights, clf.base_class_count, class_map)
}

/// Called after every fine-tuning step, once hooks have run.
pub trait StepObserver {
    fn after_step(&mut self, step: usize, clf: &LinearClassifier);
}

impl<F: FnMut(usize, &LinearClassifier)> StepObserver for F {
    fn after_step(&mut self, step: usize, clf: &LinearClassifier) {
        self(step, clf)
    }
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn after_step(&mut self, _: usize, _: &LinearClassifier) {}
}

/// Fine-tunes the joint classifier on the episode's novel support (plus the
/// undersampled base support when the episode carries one), applying the
/// online hooks of `hooks` after every optimizer step.
pub fn finetune(
    clf: &LinearClassifier,
    episode: &Episode,
    cfg: &TrainConfig,
    hooks: &NormalizationConfig,
) -> Result<LinearClassifier> {
    finetune_traced(clf, episode, cfg, hooks, &mut NoObserver)
}

pub fn finetune_traced(
    clf: &LinearClassifier,
    episode: &Episode,
    cfg: &TrainConfig,
    hooks: &NormalizationConfig,
    observer: &mut dyn StepObserver,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    hooks.validate()?;
    let (x, labels) = training_set(clf, episode)?;
    let mut clf = clf.clone();
    let mode = hooks.logit_mode();
    let frozen: Option<Vec<bool>> = hooks
        .freeze_base
        .then(|| (0..clf.class_count()).map(|i| !clf.is_novel(i)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.unwrap_or(labels.len()).min(labels.len());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut cursor = order.len();
    let mut state = SgdState::new(clf.weights.dim());

    for step in 0..cfg.iterations {
        let grad = if batch == labels.len() {
            batch_loss_and_gradient(clf.weights.view(), x.view(), &labels, mode).1
        } else {
            if cursor + batch > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            batch_loss_and_gradient(clf.weights.view(), xb.view(), &yb, mode).1
        };
        sgd_step(&mut clf, &grad, &mut state, cfg, frozen.as_deref())?;
        apply_online_hooks(&mut clf, hooks)?;
        observer.after_step(step, &clf);
    }
    if hooks.centering_cadence == Cadence::Final {
        if let Some(scope) = hooks.online_mean_centering.scope() {
            normalize::mean_center(&mut clf, scope);
        }
    }
    clf.check_finite()?;
    Ok(clf)
}

fn apply_online_hooks(clf: &mut LinearClassifier, hooks: &NormalizationConfig) -> Result<()> {
    if hooks.centering_cadence == Cadence::EveryStep {
        if let Some(scope) = hooks.online_mean_centering.scope() {
            normalize::mean_center(clf, scope);
        }
    }
    if hooks.variance_balancing == VarianceBalancing::InTraining {
        let stats = normalize::compute_stats(clf);
        normalize::variance_balance(clf, &stats)?;
    }
    Ok(())
}

/// Design matrix and column labels for the episode's training samples.
fn training_set(clf: &LinearClassifier, episode: &Episode) -> Result<(Array2<f64>, Vec<usize>)> {
    let index = clf.column_index();
    let mut sets: Vec<&FeatureDataset> = vec![&episode.novel_support];
    if let Some(bs) = &episode.base_support {
        sets.push(bs);
    }
    for &c in &episode.class_map {
        match index.get(&c) {
            Some(&col) if clf.is_novel(col) => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "episode novel class {c} has no novel column in the classifier"
                )))
            }
        }
    }
    let mut labels = Vec::new();
    let mut blocks = Vec::new();
    for ds in sets {
        if ds.dim() != clf.dim() {
            return Err(Error::ShapeMismatch(format!(
                "episode dim {} != classifier dim {}",
                ds.dim(),
                clf.dim()
            )));
        }
        for s in ds.samples() {
            let col = *index
                .get(&s.label)
                .ok_or_else(|| Error::ShapeMismatch(format!("class {} not in classifier", s.label)))?;
            labels.push(col);
        }
        blocks.push(ds.feature_matrix());
    }
    let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
    Ok((x, labels))
}
