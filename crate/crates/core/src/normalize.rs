//! Class-wise weight statistics and the classifier normalizers: mean
//! centering, variance balancing and (as a baseline) norm equalization.
//!
//! Statistics use the population convention over the `d` entries of a
//! column: `mu_i = (1/d) sum_j theta_ij`, `sigma_i^2 = (1/d) sum_j
//! (theta_ij - mu_i)^2`. For a zero-mean column this gives
//! `sigma_i = |theta_i|_2 / sqrt(d)` exactly.

use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearClassifier, LogitMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub norms: Vec<f64>,
    pub base_class_count: usize,
    pub mu_bar_base: Option<f64>,
    pub mu_bar_novel: Option<f64>,
    pub sigma_bar_base: Option<f64>,
    pub sigma_bar_novel: Option<f64>,
}

impl WeightStats {
    /// `mu_bar_novel / mu_bar_base`, when both partitions exist and the base
    /// average is nonzero.
    pub fn mean_ratio(&self) -> Option<f64> {
        match (self.mu_bar_novel, self.mu_bar_base) {
            (Some(n), Some(b)) if b != 0.0 => Some(n / b),
            _ => None,
        }
    }
}

fn column_mean_std(col: ArrayView1<'_, f64>) -> (f64, f64) {
    let d = col.len() as f64;
    let mean = col.sum() / d;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, var.sqrt())
}

fn average(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn compute_stats(clf: &LinearClassifier) -> WeightStats {
    let mut mu = Vec::with_capacity(clf.class_count());
    let mut sigma = Vec::with_capacity(clf.class_count());
    let mut norms = Vec::with_capacity(clf.class_count());
    for col in clf.weights().axis_iter(Axis(1)) {
        let (m, s) = column_mean_std(col);
        mu.push(m);
        sigma.push(s);
        norms.push(col.dot(&col).sqrt());
    }
    let b = clf.base_class_count();
    WeightStats {
        mu_bar_base: average(&mu[..b]),
        mu_bar_novel: average(&mu[b..]),
        sigma_bar_base: average(&sigma[..b]),
        sigma_bar_novel: average(&sigma[b..]),
        mu,
        sigma,
        norms,
        base_class_count: b,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringScope {
    NovelOnly,
    Both,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineCentering {
    #[default]
    Off,
    NovelOnly,
    Both,
}

impl OnlineCentering {
    pub fn scope(self) -> Option<CenteringScope> {
        match self {
            OnlineCentering::Off => None,
            OnlineCentering::NovelOnly => Some(CenteringScope::NovelOnly),
            OnlineCentering::Both => Some(CenteringScope::Both),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceBalancing {
    #[default]
    Off,
    /// Once, after fine-tuning.
    Offline,
    /// After every fine-tuning step.
    InTraining,
}

/// When online centering runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    EveryStep,
    /// Once, after the last fine-tuning step.
    Final,
}

/// Normalization hooks for one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub online_mean_centering: OnlineCentering,
    pub centering_cadence: Cadence,
    pub variance_balancing: VarianceBalancing,
    pub cosine: bool,
    pub cosine_scale: f64,
    pub freeze_base: bool,
    pub norm_equalization: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            online_mean_centering: OnlineCentering::Off,
            centering_cadence: Cadence::EveryStep,
            variance_balancing: VarianceBalancing::Off,
            cosine: false,
            cosine_scale: 10.0,
            freeze_base: false,
            norm_equalization: false,
        }
    }
}

impl NormalizationConfig {
    /// Online mean centering on novel columns plus offline variance balancing.
    pub fn mvcn() -> Self {
        Self {
            online_mean_centering: OnlineCentering::NovelOnly,
            variance_balancing: VarianceBalancing::Offline,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cosine && self.variance_balancing != VarianceBalancing::Off {
            return Err(Error::InvalidConfig(
                "cosine logits and variance balancing cannot both be enabled".into(),
            ));
        }
        if self.cosine && !(self.cosine_scale > 0.0 && self.cosine_scale.is_finite()) {
            return Err(Error::InvalidConfig("cosine_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn logit_mode(&self) -> LogitMode {
        if self.cosine {
            LogitMode::Cosine {
                scale: self.cosine_scale,
            }
        } else {
            LogitMode::Linear
        }
    }
}

/// Subtracts each in-scope column's mean from its entries.
pub fn mean_center(clf: &mut LinearClassifier, scope: CenteringScope) {
    let start = match scope {
        CenteringScope::NovelOnly => clf.base_class_count(),
        CenteringScope::Both => 0,
    };
    for (_, mut col) in clf
        .weights_mut()
        .axis_iter_mut(Axis(1))
        .enumerate()
        .filter(|(i, _)| *i >= start)
    {
        let mean = col.sum() / col.len() as f64;
        col.mapv_inplace(|v| v - mean);
    }
}

/// Rescales base column `i` by `sigma_bar_novel / sigma_i`. Novel columns are
/// untouched. Columns are not standardized: their spread is matched to the
/// novel average rather than to one.
pub fn variance_balance(clf: &mut LinearClassifier, stats: &WeightStats) -> Result<()> {
    if stats.sigma.len() != clf.class_count() || stats.base_class_count != clf.base_class_count() {
        return Err(Error::ShapeMismatch("statistics do not match classifier".into()));
    }
    let target = match stats.sigma_bar_novel {
        Some(s) if s > 0.0 => s,
        _ => return Err(Error::UntrainedNovel),
    };
    let b = clf.base_class_count();
    if let Some(i) = stats.sigma[..b].iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroVarianceBase(i));
    }
    for (i, mut col) in clf.weights_mut().axis_iter_mut(Axis(1)).take(b).enumerate() {
        let ratio = target / stats.sigma[i];
        col.mapv_inplace(|v| v * ratio);
    }
    Ok(())
}

/// Baseline: rescales every column to the mean L2 norm over all columns.
pub fn norm_equalize(clf: &mut LinearClassifier) -> Result<()> {
    let norms: Vec<f64> = clf
        .weights()
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormColumn(i));
    }
    let target = norms.iter().sum::<f64>() / norms.len() as f64;
    for (mut col, n) in clf.weights_mut().axis_iter_mut(Axis(1)).zip(norms) {
        let ratio = target / n;
        col.mapv_inplace(|v| v * ratio);
    }
    Ok(())
}

/// `|sigma - |theta|_2 / sqrt(d)|` for one column. Zero exactly when the
/// column mean is zero; otherwise `sqrt(sigma^2 + mu^2) - sigma`.
pub fn centered_norm_residual(column: ArrayView1<'_, f64>) -> f64 {
    let (_, sigma) = column_mean_std(column);
    let norm = column.dot(&column).sqrt();
    (sigma - norm / (column.len() as f64).sqrt()).abs()
}
