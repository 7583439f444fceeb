//! Prediction, split accuracies, confusion matrices and cross-episode
//! aggregation.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::affine::{apply_affine, AffineParams};
use crate::dataset::{Episode, FeatureDataset};
use crate::error::{Error, Result};
use crate::model::{batch_logits, logits, LinearClassifier, LogitMode};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(z: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub fn predict(
    clf: &LinearClassifier,
    params: Option<&AffineParams>,
    f: &[f64],
    mode: LogitMode,
) -> Result<usize> {
    let z = logits(clf, f, mode)?;
    Ok(match params {
        Some(p) => argmax(apply_affine(p, z.view())?.view()),
        None => argmax(z.view()),
    })
}

/// Predictions for every row of `x`.
pub fn predict_batch(
    clf: &LinearClassifier,
    params: Option<&AffineParams>,
    x: ArrayView2<'_, f64>,
    mode: LogitMode,
) -> Result<Vec<usize>> {
    if x.ncols() != clf.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature length {} != classifier dim {}",
            x.ncols(),
            clf.dim()
        )));
    }
    if let Some(p) = params {
        if p.len() != clf.class_count() {
            return Err(Error::ShapeMismatch("affine parameter count".into()));
        }
    }
    let mut z = batch_logits(clf.weights().view(), x, mode);
    if let Some(p) = params {
        for mut row in z.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = p.gamma[i] * *v + p.beta[i];
            }
        }
    }
    Ok(z.rows().into_iter().map(argmax).collect())
}

/// Accuracies in percent; rates as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub novel_acc: f64,
    pub base_acc: f64,
    /// `(novel_acc + base_acc) / 2`.
    pub all_acc_mean: f64,
    /// Accuracy over the pooled novel and base queries.
    pub all_acc_joint: f64,
    /// Per classifier column; `None` for a class with no queries.
    pub per_class_acc: Vec<Option<f64>>,
    /// Rows are true columns, columns are predicted columns.
    pub confusion: Vec<Vec<u64>>,
    /// Fraction of base queries predicted as any novel class.
    pub base_to_novel_rate: f64,
    /// Fraction of novel queries predicted as any base class.
    pub novel_to_base_rate: f64,
    pub novel_queries: usize,
    pub base_queries: usize,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Counts predictions over the episode's novel and base query pools.
pub fn evaluate(
    clf: &LinearClassifier,
    params: Option<&AffineParams>,
    episode: &Episode,
    mode: LogitMode,
) -> Result<EvalReport> {
    evaluate_pools(clf, params, &episode.novel_query, &episode.base_query, mode)
}

pub fn evaluate_pools(
    clf: &LinearClassifier,
    params: Option<&AffineParams>,
    novel_query: &FeatureDataset,
    base_query: &FeatureDataset,
    mode: LogitMode,
) -> Result<EvalReport> {
    let c = clf.class_count();
    let index = clf.column_index();
    let mut confusion = vec![vec![0u64; c]; c];

    let mut tally = |pool: &FeatureDataset| -> Result<(usize, usize, usize)> {
        let truth = pool
            .samples()
            .iter()
            .map(|s| {
                index
                    .get(&s.label)
                    .copied()
                    .ok_or_else(|| Error::ShapeMismatch(format!("class {} not covered by classifier", s.label)))
            })
            .collect::<Result<Vec<usize>>>()?;
        let preds = predict_batch(clf, params, pool.feature_matrix().view(), mode)?;
        let (mut hits, mut crossed) = (0, 0);
        for (&t, &p) in truth.iter().zip(&preds) {
            confusion[t][p] += 1;
            hits += (t == p) as usize;
            crossed += (clf.is_novel(t) != clf.is_novel(p)) as usize;
        }
        Ok((hits, crossed, truth.len()))
    };
    let (novel_hits, novel_crossed, n_novel) = tally(novel_query)?;
    let (base_hits, base_crossed, n_base) = tally(base_query)?;

    let novel_acc = percent(novel_hits, n_novel);
    let base_acc = percent(base_hits, n_base);
    let per_class_acc = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| 100.0 * row[i] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        novel_acc,
        base_acc,
        all_acc_mean: (novel_acc + base_acc) / 2.0,
        all_acc_joint: percent(novel_hits + base_hits, n_novel + n_base),
        per_class_acc,
        confusion,
        base_to_novel_rate: fraction(base_crossed, n_base),
        novel_to_base_rate: fraction(novel_crossed, n_novel),
        novel_queries: n_novel,
        base_queries: n_base,
    })
}

/// Accuracy of `clf` on `pool`, predicting over `clf`'s own columns only.
pub fn restricted_accuracy(clf: &LinearClassifier, pool: &FeatureDataset, mode: LogitMode) -> Result<f64> {
    let index = clf.column_index();
    let preds = predict_batch(clf, None, pool.feature_matrix().view(), mode)?;
    let mut hits = 0;
    for (s, p) in pool.samples().iter().zip(preds) {
        let t = *index
            .get(&s.label)
            .ok_or_else(|| Error::ShapeMismatch(format!("class {} not covered by classifier", s.label)))?;
        hits += (t == p) as usize;
    }
    Ok(percent(hits, pool.len()))
}

/// Conditional accuracies: the pretrained classifier on base queries over
/// base classes only, and a novel-only classifier on novel queries.
pub fn upper_bounds(
    pretrained: &LinearClassifier,
    novel_only: &LinearClassifier,
    episode: &Episode,
    mode: LogitMode,
) -> Result<(f64, f64)> {
    let base_ub = restricted_accuracy(&pretrained.base_only(), &episode.base_query, mode)?;
    let novel_ub = restricted_accuracy(novel_only, &episode.novel_query, mode)?;
    Ok((base_ub, novel_ub))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Novel,
    Base,
    AllMean,
    AllJoint,
    BaseToNovel,
    NovelToBase,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Novel,
        Metric::Base,
        Metric::AllMean,
        Metric::AllJoint,
        Metric::BaseToNovel,
        Metric::NovelToBase,
    ];

    pub fn of(self, r: &EvalReport) -> f64 {
        match self {
            Metric::Novel => r.novel_acc,
            Metric::Base => r.base_acc,
            Metric::AllMean => r.all_acc_mean,
            Metric::AllJoint => r.all_acc_joint,
            Metric::BaseToNovel => r.base_to_novel_rate,
            Metric::NovelToBase => r.novel_to_base_rate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Novel => "novel",
            Metric::Base => "base",
            Metric::AllMean => "all_mean",
            Metric::AllJoint => "all_joint",
            Metric::BaseToNovel => "base_to_novel",
            Metric::NovelToBase => "novel_to_base",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    /// `1.96 * s / sqrt(T)` with the `T - 1` sample deviation; absent for
    /// fewer than two episodes.
    pub half_width: Option<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAggregate {
    pub episodes: usize,
    pub metrics: Vec<MetricSummary>,
}

impl EpisodeAggregate {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.get(metric).map(|m| m.mean)
    }
}

pub const Z_95: f64 = 1.96;

pub fn aggregate(reports: &[EvalReport], metrics: &[Metric]) -> Result<EpisodeAggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to aggregate".into()));
    }
    let t = reports.len();
    let summaries = metrics
        .iter()
        .map(|&m| {
            let values: Vec<f64> = reports.iter().map(|r| m.of(r)).collect();
            let mean = values.iter().sum::<f64>() / t as f64;
            let half_width = (t >= 2).then(|| {
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                let s = (ss / (t - 1) as f64).sqrt();
                Z_95 * s / (t as f64).sqrt()
            });
            MetricSummary {
                metric: m,
                mean,
                half_width,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(EpisodeAggregate {
        episodes: t,
        metrics: summaries,
    })
}
