//! Post linear optimization: per-class logit scale `gamma` and offset `beta`
//! trained on the novel support with the classifier frozen.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::model::{batch_logits, cross_entropy_loss, softmax_in_place, LinearClassifier, LogitMode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AffineParams {
    pub fn identity(classes: usize) -> Self {
        Self {
            gamma: vec![1.0; classes],
            beta: vec![0.0; classes],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.gamma.iter().all(|&g| g == 1.0) && self.beta.iter().all(|&b| b == 0.0)
    }
}

pub fn init_affine(clf: &LinearClassifier) -> AffineParams {
    AffineParams::identity(clf.class_count())
}

/// `z'_i = gamma_i * z_i + beta_i`.
pub fn apply_affine(params: &AffineParams, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if z.len() != params.len() || params.beta.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits, {} gamma, {} beta",
            z.len(),
            params.gamma.len(),
            params.beta.len()
        )));
    }
    Ok(z.iter()
        .zip(params.gamma.iter().zip(&params.beta))
        .map(|(&v, (&g, &b))| g * v + b)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineConfig {
    pub train: TrainConfig,
    /// Train only the novel-class parameters; base entries stay at identity.
    pub novel_only: bool,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                weight_decay: 0.0,
                ..TrainConfig::finetune(1)
            },
            novel_only: false,
        }
    }
}

/// Mean cross-entropy of the affine-adjusted logits and its gradients:
/// `dL/dgamma_i = mean((p_i - y_i) z_i)`, `dL/dbeta_i = mean(p_i - y_i)`.
pub fn affine_loss_and_gradient(
    params: &AffineParams,
    z: ArrayView2<'_, f64>,
    labels: &[usize],
) -> (f64, Array1<f64>, Array1<f64>) {
    let c = params.len();
    let mut g_gamma = Array1::zeros(c);
    let mut g_beta = Array1::zeros(c);
    let mut loss = 0.0;
    let mut row = Array1::zeros(c);
    for (zr, &y) in z.rows().into_iter().zip(labels) {
        for i in 0..c {
            row[i] = params.gamma[i] * zr[i] + params.beta[i];
        }
        softmax_in_place(row.view_mut());
        loss += cross_entropy_loss(row.view(), y);
        row[y] -= 1.0;
        for i in 0..c {
            g_gamma[i] += row[i] * zr[i];
            g_beta[i] += row[i];
        }
    }
    let n = labels.len() as f64;
    (loss / n, g_gamma / n, g_beta / n)
}

/// Trains `gamma`, `beta` on the episode's novel support only. The
/// classifier is borrowed immutably and never modified.
pub fn train_affine(
    clf: &LinearClassifier,
    episode: &Episode,
    cfg: &AffineConfig,
    mode: LogitMode,
) -> Result<AffineParams> {
    let mut params = init_affine(clf);
    if cfg.train.iterations == 0 {
        return Ok(params);
    }
    cfg.train.validate()?;
    let index = clf.column_index();
    let labels = episode
        .novel_support
        .samples()
        .iter()
        .map(|s| {
            index
                .get(&s.label)
                .copied()
                .ok_or_else(|| Error::ShapeMismatch(format!("class {} not in classifier", s.label)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let x = episode.novel_support.feature_matrix();
    if x.ncols() != clf.dim() {
        return Err(Error::ShapeMismatch("support dim".into()));
    }
    let z = batch_logits(clf.weights().view(), x.view(), mode);

    let c = clf.class_count();
    let skip = if cfg.novel_only { clf.base_class_count() } else { 0 };
    let mut gamma = Array1::from(params.gamma.clone());
    let mut beta = Array1::from(params.beta.clone());
    let mut v_gamma = Array1::zeros(c);
    let mut v_beta = Array1::zeros(c);
    for step in 0..cfg.train.iterations {
        let current = AffineParams {
            gamma: gamma.to_vec(),
            beta: beta.to_vec(),
        };
        let (_, gg, gb) = affine_loss_and_gradient(&current, z.view(), &labels);
        let lr = cfg.train.learning_rate_at(step);
        let tail = ndarray::s![skip..];
        crate::model::sgd_update(
            gamma.slice_mut(tail),
            v_gamma.slice_mut(tail),
            gg.slice(tail),
            &cfg.train,
            lr,
        );
        crate::model::sgd_update(beta.slice_mut(tail), v_beta.slice_mut(tail), gb.slice(tail), &cfg.train, lr);
    }
    params.gamma = gamma.to_vec();
    params.beta = beta.to_vec();
    if params.gamma.iter().chain(&params.beta).any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite affine parameter".into()));
    }
    Ok(params)
}
