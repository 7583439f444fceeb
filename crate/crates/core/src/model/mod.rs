//! Bias-free linear classifier over frozen features, its softmax
//! cross-entropy loss and the gradients used by every training stage.

mod checkpoint;
mod train;

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub(crate) use train::sgd_update;
pub use train::{
    extend_classifier, extend_classifier_with_std, finetune, finetune_traced, sgd_step, train_base, SgdState,
    StepObserver, TrainConfig, Regularizer,
};

/// Guard for `-ln p` on saturated probabilities.
pub const LOG_EPS: f64 = 1e-300;

/// Joint classifier `d x |C|`; column `i` is the weight vector of class `i`.
/// Base columns precede novel columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub(crate) weights: Array2<f64>,
    pub(crate) base_class_count: usize,
    pub(crate) novel_class_count: usize,
    /// Source class id of every column.
    pub(crate) class_map: Vec<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LogitMode {
    #[default]
    Linear,
    /// `scale * cos(theta_i, f)`, zero when either norm vanishes.
    Cosine { scale: f64 },
}

impl LinearClassifier {
    /// Classifier over base classes only.
    pub fn from_weights(weights: Array2<f64>, class_map: Vec<u32>) -> Result<Self> {
        let base = weights.ncols();
        Self::with_partition(weights, base, class_map)
    }

    pub fn with_partition(weights: Array2<f64>, base_class_count: usize, class_map: Vec<u32>) -> Result<Self> {
        if weights.nrows() == 0 {
            return Err(Error::ZeroDimensionality);
        }
        if class_map.len() != weights.ncols() || base_class_count > weights.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} columns, {} class ids, {} base",
                weights.ncols(),
                class_map.len(),
                base_class_count
            )));
        }
        let clf = Self {
            novel_class_count: weights.ncols() - base_class_count,
            weights,
            base_class_count,
            class_map,
        };
        clf.check_finite()?;
        Ok(clf)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Mutable access for callers applying their own projections.
    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.weights.ncols()
    }

    pub fn base_class_count(&self) -> usize {
        self.base_class_count
    }

    pub fn novel_class_count(&self) -> usize {
        self.novel_class_count
    }

    pub fn class_map(&self) -> &[u32] {
        &self.class_map
    }

    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.weights.column(i)
    }

    pub fn is_novel(&self, column: usize) -> bool {
        column >= self.base_class_count
    }

    /// Column index for each source class id.
    pub fn column_index(&self) -> HashMap<u32, usize> {
        self.class_map.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some((idx, _)) = self.weights.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite weight at row {}, column {}",
                idx.0, idx.1
            )));
        }
        Ok(())
    }

    /// Drops every novel column.
    pub fn base_only(&self) -> Self {
        let b = self.base_class_count;
        Self {
            weights: self.weights.slice(ndarray::s![.., ..b]).to_owned(),
            base_class_count: b,
            novel_class_count: 0,
            class_map: self.class_map[..b].to_vec(),
        }
    }
}

/// Logits for one feature vector.
pub fn logits(clf: &LinearClassifier, f: &[f64], mode: LogitMode) -> Result<Array1<f64>> {
    if f.len() != clf.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature length {} != classifier dim {}",
            f.len(),
            clf.dim()
        )));
    }
    let f = ArrayView1::from(f);
    let z = clf.weights.t().dot(&f);
    Ok(match mode {
        LogitMode::Linear => z,
        LogitMode::Cosine { scale } => {
            let fnorm = f.dot(&f).sqrt();
            let norms = column_norms(clf.weights.view());
            cosine_from_dots(z, &norms, fnorm, scale)
        }
    })
}

/// Logits for every row of `x` (rows = samples), shape `n x |C|`.
pub fn batch_logits(weights: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, mode: LogitMode) -> Array2<f64> {
    let z = x.dot(&weights);
    match mode {
        LogitMode::Linear => z,
        LogitMode::Cosine { scale } => {
            let col_norms = column_norms(weights);
            let mut z = z;
            for (mut row, xr) in z.rows_mut().into_iter().zip(x.rows()) {
                let fnorm = xr.dot(&xr).sqrt();
                for (v, &cn) in row.iter_mut().zip(col_norms.iter()) {
                    *v = cosine_value(*v, cn, fnorm, scale);
                }
            }
            z
        }
    }
}

fn column_norms(w: ArrayView2<'_, f64>) -> Array1<f64> {
    w.map_axis(Axis(0), |c| c.dot(&c).sqrt())
}

fn cosine_value(dot: f64, col_norm: f64, fnorm: f64, scale: f64) -> f64 {
    if col_norm == 0.0 || fnorm == 0.0 {
        0.0
    } else {
        scale * dot / (col_norm * fnorm)
    }
}

fn cosine_from_dots(z: Array1<f64>, norms: &Array1<f64>, fnorm: f64, scale: f64) -> Array1<f64> {
    z.iter()
        .zip(norms.iter())
        .map(|(&d, &n)| cosine_value(d, n, fnorm, scale))
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut p = z.to_owned();
    softmax_in_place(p.view_mut());
    p
}

pub(crate) fn softmax_in_place(mut z: ndarray::ArrayViewMut1<'_, f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.mapv_inplace(|v| (v - max).exp());
    let sum = z.sum();
    z.mapv_inplace(|v| v / sum);
}

/// `-ln p[label]`, clamped at `-ln(LOG_EPS)`.
pub fn cross_entropy_loss(p: ArrayView1<'_, f64>, label: usize) -> f64 {
    -p[label].max(LOG_EPS).ln()
}

/// Loss gradient for one sample under linear logits: column `i` is
/// `(p_i - y_i) * f`. Descending along it raises the true-class column and
/// lowers every other column wherever `f >= 0`.
pub fn ce_gradient(f: &[f64], p: ArrayView1<'_, f64>, label: usize) -> Array2<f64> {
    let mut g = Array2::zeros((f.len(), p.len()));
    for (i, mut col) in g.columns_mut().into_iter().enumerate() {
        let coeff = p[i] - if i == label { 1.0 } else { 0.0 };
        for (dst, &fv) in col.iter_mut().zip(f) {
            *dst = coeff * fv;
        }
    }
    g
}

/// Mean loss and mean weight gradient over a batch.
///
/// `labels` are column indices. In cosine mode the gradient chains through
/// the column normalization: `d z_i / d theta_i = s / (|theta_i| |f|) *
/// (f - (theta_i . f / |theta_i|^2) theta_i)`.
pub fn batch_loss_and_gradient(
    weights: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    mode: LogitMode,
) -> (f64, Array2<f64>) {
    let n = x.nrows();
    let mut delta = batch_logits(weights, x, mode);
    let mut loss = 0.0;
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        softmax_in_place(row.view_mut());
        loss += cross_entropy_loss(row.view(), y);
        row[y] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    match mode {
        LogitMode::Linear => {
            let mut g = x.t().dot(&delta);
            g.mapv_inplace(|v| v * inv_n);
            (loss * inv_n, g)
        }
        LogitMode::Cosine { scale } => {
            let norms = column_norms(weights);
            let mut g = Array2::zeros(weights.raw_dim());
            for (xr, drow) in x.rows().into_iter().zip(delta.rows()) {
                let fnorm = xr.dot(&xr).sqrt();
                if fnorm == 0.0 {
                    continue;
                }
                for (i, mut gcol) in g.columns_mut().into_iter().enumerate() {
                    let cn = norms[i];
                    if cn == 0.0 {
                        continue;
                    }
                    let w = weights.column(i);
                    let dot = w.dot(&xr);
                    let a = drow[i] * scale / (cn * fnorm);
                    let b = dot / (cn * cn);
                    for ((gv, &fv), &wv) in gcol.iter_mut().zip(xr.iter()).zip(w.iter()) {
                        *gv += a * (fv - b * wv);
                    }
                }
            }
            g.mapv_inplace(|v| v * inv_n);
            (loss * inv_n, g)
        }
    }
}

/// Mean loss only.
pub fn batch_loss(weights: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, labels: &[usize], mode: LogitMode) -> f64 {
    let mut z = batch_logits(weights, x, mode);
    let mut loss = 0.0;
    for (mut row, &y) in z.rows_mut().into_iter().zip(labels) {
        softmax_in_place(row.view_mut());
        loss += cross_entropy_loss(row.view(), y);
    }
    loss / x.nrows() as f64
}
