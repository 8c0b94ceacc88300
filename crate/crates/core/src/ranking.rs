//! Ranking average precision over similarity scores.
//!
//! For a query with retrievable items `I = I_P ∪ I_N`,
//!
//! ```text
//! R(i, X) = 1 + Σ_{j ∈ X, j ≠ i} 1{s_j - s_i > 0}
//! AP      = (1/|I_P|) Σ_{i ∈ I_P} R(i, I_P) / R(i, I)
//! ```
//!
//! The smoothed form replaces the indicator with `φ(d; τ) = 1 / (1 + e^{-d/τ})`,
//! which makes AP differentiable in the scores. Both forms live here together with
//! the analytic gradient and the multi-view batch objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::Execution;

/// Temperature and numerator treatment of the sigmoid relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub tau: f64,
    /// Relax the rank among positives as well as the rank among all items.
    pub smooth_numerator: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { tau: 0.01, smooth_numerator: true }
    }
}

impl SmoothingConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let cfg = Self { tau, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0 && self.tau.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidTemperature(self.tau))
        }
    }
}

/// Which items a rank is counted over.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    /// Only the items flagged `true`.
    Positives(&'a [bool]),
}

/// Logistic sigmoid `1 / (1 + e^{-d/τ})`, evaluated without overflow for any `d/τ`.
#[inline]
pub fn sigmoid<T: Scalar>(d: T, tau: T) -> T {
    let x = d / tau;
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Derivative of [`sigmoid`] with respect to `d`.
#[inline]
pub fn sigmoid_grad<T: Scalar>(d: T, tau: T) -> T {
    let p = sigmoid(d, tau);
    p * (T::one() - p) / tau
}

fn check_scores<T: Scalar>(scores: &[T]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

fn check_mask<T: Scalar>(scores: &[T], positives: &[bool]) -> Result<usize> {
    check_scores(scores)?;
    if positives.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries, scores have {}",
            positives.len(),
            scores.len()
        )));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positives.len() {
        return Err(Error::DegenerateMask);
    }
    Ok(n_pos)
}

fn check_rank_args<T: Scalar>(scores: &[T], i: usize, subset: Subset<'_>) -> Result<()> {
    check_scores(scores)?;
    if i >= scores.len() {
        return Err(Error::IndexOutOfBounds { index: i, len: scores.len() });
    }
    if let Subset::Positives(mask) = subset {
        if mask.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries, scores have {}",
                mask.len(),
                scores.len()
            )));
        }
        if !mask.iter().any(|&p| p) {
            return Err(Error::Empty("positive subset"));
        }
        if !mask[i] {
            return Err(Error::NotPositive(i));
        }
    }
    Ok(())
}

#[inline]
fn in_subset(subset: Subset<'_>, j: usize) -> bool {
    match subset {
        Subset::All => true,
        Subset::Positives(mask) => mask[j],
    }
}

/// `1 + |{j ∈ subset, j ≠ i : scores[j] > scores[i]}|`. Ties do not push an item down.
pub fn exact_rank<T: Scalar>(scores: &[T], i: usize, subset: Subset<'_>) -> Result<usize> {
    check_rank_args(scores, i, subset)?;
    let si = scores[i];
    Ok(1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &sj)| j != i && in_subset(subset, j) && sj > si)
        .count())
}

/// Sigmoid-relaxed rank `1 + Σ_{j ∈ subset, j ≠ i} φ(scores[j] - scores[i]; τ)`.
///
/// With `smooth_numerator = false` the rank within the positive subset stays exact.
pub fn smooth_rank<T: Scalar>(
    scores: &[T],
    i: usize,
    subset: Subset<'_>,
    cfg: &SmoothingConfig,
) -> Result<T> {
    cfg.validate()?;
    check_rank_args(scores, i, subset)?;
    if matches!(subset, Subset::Positives(_)) && !cfg.smooth_numerator {
        return exact_rank(scores, i, subset).map(T::of_usize);
    }
    let tau = T::of(cfg.tau);
    let si = scores[i];
    let mut rank = T::one();
    for (j, &sj) in scores.iter().enumerate() {
        if j != i && in_subset(subset, j) {
            rank += sigmoid(sj - si, tau);
        }
    }
    Ok(rank)
}

/// Exact ranks of every item among all items and among positives (zero for negatives),
/// computed with one sort instead of the quadratic definition.
fn exact_ranks<T: Scalar>(scores: &[T], positives: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let m = scores.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut rank_all = vec![0usize; m];
    let mut rank_pos = vec![0usize; m];
    let mut start = 0;
    let mut pos_before = 0;
    while start < m {
        let s = scores[order[start]];
        let mut end = start;
        let mut pos_in_block = 0;
        while end < m && scores[order[end]] == s {
            let idx = order[end];
            rank_all[idx] = 1 + start;
            if positives[idx] {
                rank_pos[idx] = 1 + pos_before;
                pos_in_block += 1;
            }
            end += 1;
        }
        pos_before += pos_in_block;
        start = end;
    }
    (rank_all, rank_pos)
}

/// Exact average precision of one ranking.
///
/// Equals 1 iff every positive scores strictly higher than every negative.
pub fn exact_ap<T: Scalar>(scores: &[T], positives: &[bool]) -> Result<T> {
    let n_pos = check_mask(scores, positives)?;
    let (rank_all, rank_pos) = exact_ranks(scores, positives);
    let mut acc = T::zero();
    for i in (0..scores.len()).filter(|&i| positives[i]) {
        acc += T::of_usize(rank_pos[i]) / T::of_usize(rank_all[i]);
    }
    Ok(acc / T::of_usize(n_pos))
}

/// Smoothed AP of one ranking.
pub fn smooth_ap<T: Scalar>(scores: &[T], positives: &[bool], cfg: &SmoothingConfig) -> Result<T> {
    cfg.validate()?;
    check_mask(scores, positives)?;
    Ok(smooth_ap_kernel(scores, positives, cfg, None))
}

/// Gradient of [`smooth_ap`] with respect to every score.
pub fn smooth_ap_grad<T: Scalar>(
    scores: &[T],
    positives: &[bool],
    cfg: &SmoothingConfig,
) -> Result<Vec<T>> {
    smooth_ap_with_grad(scores, positives, cfg).map(|(_, g)| g)
}

/// Smoothed AP together with its gradient.
pub fn smooth_ap_with_grad<T: Scalar>(
    scores: &[T],
    positives: &[bool],
    cfg: &SmoothingConfig,
) -> Result<(T, Vec<T>)> {
    cfg.validate()?;
    check_mask(scores, positives)?;
    let mut grad = vec![T::zero(); scores.len()];
    let ap = smooth_ap_kernel(scores, positives, cfg, Some(&mut grad));
    Ok((ap, grad))
}

/// Shared forward/backward pass. Inputs are already validated.
///
/// For positive `i` with `N_i = R(i, I_P)` and `D_i = R(i, I)`, each pair `(i, j)`
/// contributes `φ'(s_j - s_i) · (1{j ∈ I_P}/D_i - N_i/D_i²)` to `∂/∂s_j` and the
/// negation of that to `∂/∂s_i`. The indicator term is dropped when the numerator
/// is exact.
fn smooth_ap_kernel<T: Scalar>(
    scores: &[T],
    positives: &[bool],
    cfg: &SmoothingConfig,
    mut grad: Option<&mut [T]>,
) -> T {
    let tau = T::of(cfg.tau);
    let m = scores.len();
    let mut phi = vec![T::zero(); m];
    let mut n_pos = 0usize;
    let mut acc = T::zero();
    for i in 0..m {
        if !positives[i] {
            continue;
        }
        n_pos += 1;
        let si = scores[i];
        let mut num = T::one();
        let mut den = T::one();
        for j in 0..m {
            if j == i {
                continue;
            }
            let d = scores[j] - si;
            let p = sigmoid(d, tau);
            phi[j] = p;
            den += p;
            if positives[j] {
                num += if cfg.smooth_numerator {
                    p
                } else if d > T::zero() {
                    T::one()
                } else {
                    T::zero()
                };
            }
        }
        acc += num / den;

        if let Some(g) = grad.as_deref_mut() {
            let inv_den = T::one() / den;
            let ratio = num * inv_den * inv_den;
            let mut gi = T::zero();
            for j in 0..m {
                if j == i {
                    continue;
                }
                let p = phi[j];
                let dphi = p * (T::one() - p) / tau;
                let mut coef = -ratio;
                if cfg.smooth_numerator && positives[j] {
                    coef += inv_den;
                }
                let w = dphi * coef;
                g[j] += w;
                gi -= w;
            }
            g[i] += gi;
        }
    }
    let scale = T::one() / T::of_usize(n_pos);
    if let Some(g) = grad {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    acc * scale
}

/// Source-item id of every view in a multi-view batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    group_of_view: Vec<usize>,
    num_groups: usize,
    views_per_group: usize,
}

impl GroupLabels {
    /// Validates that every group in `0..B` has exactly `K` views with `B, K ≥ 2`.
    pub fn new(group_of_view: Vec<usize>) -> Result<Self> {
        let Some(&max) = group_of_view.iter().max() else {
            return Err(Error::InvalidGroups("no views".into()));
        };
        let num_groups = max + 1;
        let mut counts = vec![0usize; num_groups];
        for &g in &group_of_view {
            counts[g] += 1;
        }
        let k = counts[0];
        if let Some((g, &c)) = counts.iter().enumerate().find(|&(_, &c)| c != k) {
            return Err(Error::InvalidGroups(format!(
                "group {g} has {c} views, group 0 has {k}"
            )));
        }
        if num_groups < 2 {
            return Err(Error::InvalidGroups("need at least 2 groups for negatives".into()));
        }
        if k < 2 {
            return Err(Error::InvalidGroups("need at least 2 views per group for positives".into()));
        }
        Ok(Self { group_of_view, num_groups, views_per_group: k })
    }

    /// `K` consecutive views per group: `[0, 0, .., 1, 1, ..]`.
    pub fn contiguous(num_groups: usize, views_per_group: usize) -> Result<Self> {
        Self::new(
            (0..num_groups)
                .flat_map(|g| std::iter::repeat_n(g, views_per_group))
                .collect(),
        )
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn views_per_group(&self) -> usize {
        self.views_per_group
    }

    pub fn len(&self) -> usize {
        self.group_of_view.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of_view.is_empty()
    }

    pub fn group_of(&self, view: usize) -> usize {
        self.group_of_view[view]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.group_of_view
    }

    /// Ordinal of each view among the views of its group, in index order.
    pub fn position_in_group(&self) -> Vec<usize> {
        let mut seen = vec![0usize; self.num_groups];
        self.group_of_view
            .iter()
            .map(|&g| {
                let p = seen[g];
                seen[g] += 1;
                p
            })
            .collect()
    }
}

/// Per-query AP, batch loss and the gradient of the loss w.r.t. the similarity matrix.
#[derive(Debug, Clone)]
pub struct ApResult<T> {
    pub per_query_ap: Vec<T>,
    /// `1 - mean(per_query_ap)`.
    pub loss: T,
    /// `∂loss/∂sim[q][j]`; row `q` holds the contribution of query `q`. Zero diagonal.
    pub grad_wrt_similarities: ndarray::Array2<T>,
}

impl<T: Scalar> ApResult<T> {
    pub fn mean_ap(&self) -> T {
        T::one() - self.loss
    }
}

/// Multi-view smooth-AP objective: every view queries all other views of the batch,
/// views of its own group are the positives.
pub fn batch_smooth_ap_loss<T: Scalar>(
    sim: &SimilarityMatrix<T>,
    groups: &GroupLabels,
    cfg: &SmoothingConfig,
) -> Result<ApResult<T>> {
    batch_smooth_ap_loss_with(sim, groups, cfg, Execution::Deterministic)
}

pub fn batch_smooth_ap_loss_with<T: Scalar>(
    sim: &SimilarityMatrix<T>,
    groups: &GroupLabels,
    cfg: &SmoothingConfig,
    execution: Execution,
) -> Result<ApResult<T>> {
    cfg.validate()?;
    let n = sim.len();
    if groups.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} group labels for a {n}x{n} similarity matrix",
            groups.len()
        )));
    }
    let s = sim.as_array();
    let query = |q: usize| -> (T, Vec<T>) {
        let gq = groups.group_of(q);
        let mut scores = Vec::with_capacity(n - 1);
        let mut mask = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| j != q) {
            scores.push(s[[q, j]]);
            mask.push(groups.group_of(j) == gq);
        }
        let mut g = vec![T::zero(); n - 1];
        let ap = smooth_ap_kernel(&scores, &mask, cfg, Some(&mut g));
        (ap, g)
    };
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix"));
    }
    // Each query only writes its own row, so parallel evaluation is bit-identical to serial.
    let per_query: Vec<(T, Vec<T>)> = match execution {
        Execution::Deterministic => (0..n).map(query).collect(),
        Execution::Parallel => (0..n).into_par_iter().map(query).collect(),
    };
    let scale = -T::one() / T::of_usize(n);
    let mut grad = ndarray::Array2::zeros((n, n));
    let mut aps = Vec::with_capacity(n);
    for (q, (ap, g)) in per_query.into_iter().enumerate() {
        aps.push(ap);
        let mut it = g.into_iter();
        for j in (0..n).filter(|&j| j != q) {
            grad[[q, j]] = it.next().expect("row length") * scale;
        }
    }
    let loss = T::one() - pairwise_sum(&aps) / T::of_usize(n);
    Ok(ApResult { per_query_ap: aps, loss, grad_wrt_similarities: grad })
}

/// Mean exact AP of a batch, the non-smoothed counterpart of the batch objective.
pub fn batch_exact_map<T: Scalar>(sim: &SimilarityMatrix<T>, groups: &GroupLabels) -> Result<T> {
    let n = sim.len();
    if groups.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} group labels for a {n}x{n} similarity matrix",
            groups.len()
        )));
    }
    let s = sim.as_array();
    let mut aps = Vec::with_capacity(n);
    for q in 0..n {
        let gq = groups.group_of(q);
        let (scores, mask): (Vec<T>, Vec<bool>) = (0..n)
            .filter(|&j| j != q)
            .map(|j| (s[[q, j]], groups.group_of(j) == gq))
            .unzip();
        aps.push(exact_ap(&scores, &mask)?);
    }
    Ok(pairwise_sum(&aps) / T::of_usize(n))
}
