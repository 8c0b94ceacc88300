//! Frozen-feature evaluation: linear probe accuracy and retrieval mAP.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::embedding::cosine_similarity_matrix;
use crate::encoder::{forward, EncoderParams};
use crate::error::{Error, Result};
use crate::ranking::exact_ap;
use crate::scalar::{pairwise_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 1e-2, l2_penalty: 1e-4, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("probe epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("probe learning_rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::InvalidConfig("probe l2_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1_accuracy: f64,
    /// `None` for classes absent from the held-out set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `dim × num_classes`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Pre-projection representations of every sample. Plain values, no link to the encoder.
pub fn extract_features<T: Scalar>(params: &EncoderParams<T>, dataset: &LabeledDataset<T>) -> Result<Array2<T>> {
    Ok(forward(params, dataset.samples.view())?.representations)
}

fn to_f64<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<f64> {
    x.mapv(|v| v.as_f64())
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Multinomial logistic regression by full-batch gradient descent with an L2 penalty on
/// the weights, scored on the held-out set.
pub fn train_linear_probe<T: Scalar>(
    train_features: ArrayView2<'_, T>,
    train_labels: &[usize],
    test_features: ArrayView2<'_, T>,
    test_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    cfg.validate()?;
    if train_features.nrows() != train_labels.len() || test_features.nrows() != test_labels.len() {
        return Err(Error::ShapeMismatch("features and labels differ in length".into()));
    }
    if train_features.ncols() != test_features.ncols() {
        return Err(Error::ShapeMismatch("train and test feature widths differ".into()));
    }
    if let Some((index, &label)) = train_labels.iter().chain(test_labels).enumerate().find(|&(_, &l)| l >= num_classes) {
        return Err(Error::LabelOutOfRange { index, label, num_classes });
    }
    let mut present = vec![false; num_classes];
    train_labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidConfig("probe training set needs at least two classes".into()));
    }
    let x = to_f64(train_features);
    let xt = x.t();
    let (n, d) = x.dim();
    let mut onehot = Array2::<f64>::zeros((n, num_classes));
    for (i, &l) in train_labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Array2::from_shape_simple_fn((d, num_classes), || 1e-3 * (rng.random::<f64>() - 0.5));
    let mut b = Array1::<f64>::zeros(num_classes);
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.epochs {
        let mut p = x.dot(&w) + &b;
        softmax_rows(&mut p);
        p -= &onehot;
        let gw = xt.dot(&p) * inv_n + &w * cfg.l2_penalty;
        let gb = p.sum_axis(Axis(0)) * inv_n;
        w.scaled_add(-cfg.learning_rate, &gw);
        b.scaled_add(-cfg.learning_rate, &gb);
    }

    let logits = to_f64(test_features).dot(&w) + &b;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(test_labels) {
        let pred = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
            .0;
        totals[label] += 1;
        if pred == label {
            hits[label] += 1;
            correct += 1;
        }
    }
    let top1 = if test_labels.is_empty() { 0.0 } else { correct as f64 / test_labels.len() as f64 };
    Ok(ProbeResult {
        top1_accuracy: top1,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        weights: w.rows().into_iter().map(|r| r.to_vec()).collect(),
        bias: b.to_vec(),
    })
}

/// Mean exact AP when every sample queries all others by cosine similarity and
/// same-label samples are the positives.
pub fn retrieval_map<T: Scalar>(features: ArrayView2<'_, T>, labels: &[usize]) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::ShapeMismatch("features and labels differ in length".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; num_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some((class, &count)) = counts.iter().enumerate().find(|&(_, &c)| c == 1) {
        return Err(Error::ClassTooSmall { class, count });
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateMask);
    }
    let sim = cosine_similarity_matrix(to_f64(features).view())?;
    let s = sim.as_array();
    let n = labels.len();
    let mut aps = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n - 1);
    let mut mask = Vec::with_capacity(n - 1);
    for q in 0..n {
        scores.clear();
        mask.clear();
        for j in (0..n).filter(|&j| j != q) {
            scores.push(s[[q, j]]);
            mask.push(labels[j] == labels[q]);
        }
        aps.push(exact_ap(&scores, &mask)?);
    }
    Ok(pairwise_sum(&aps) / n as f64)
}
