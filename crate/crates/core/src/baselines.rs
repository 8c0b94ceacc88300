//! InfoNCE (NT-Xent) contrastive loss over the same similarity matrix as the ranking
//! objective, used as the pairwise baseline.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::ranking::GroupLabels;
use crate::scalar::{pairwise_sum, Scalar};
use crate::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Views `2t` and `2t + 1` of a group are each other's positive. With `K > 2`
    /// a group contributes `K / 2` independent pairs.
    #[default]
    AdjacentPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub pairing: Pairing,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.5, pairing: Pairing::AdjacentPairs }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidTemperature(self.temperature))
        }
    }
}

/// Positive partner of every view.
fn partners(groups: &GroupLabels, pairing: Pairing) -> Result<Vec<usize>> {
    match pairing {
        Pairing::AdjacentPairs => {
            if !groups.views_per_group().is_multiple_of(2) {
                return Err(Error::InvalidGroups(format!(
                    "adjacent pairing needs an even number of views per group, got {}",
                    groups.views_per_group()
                )));
            }
        }
    }
    let k = groups.views_per_group();
    let pos = groups.position_in_group();
    let mut slot = vec![usize::MAX; groups.num_groups() * k];
    for (v, (&g, &p)) in groups.as_slice().iter().zip(&pos).enumerate() {
        slot[g * k + p] = v;
    }
    Ok(groups
        .as_slice()
        .iter()
        .zip(&pos)
        .map(|(&g, &p)| slot[g * k + (p ^ 1)])
        .collect())
}

/// Mean over anchors of `-log(exp(s_ip / t) / Σ_{j ≠ i} exp(s_ij / t))` and its gradient
/// with respect to the similarity matrix (zero diagonal).
pub fn info_nce_loss<T: Scalar>(
    sim: &SimilarityMatrix<T>,
    groups: &GroupLabels,
    cfg: &ContrastiveConfig,
) -> Result<(T, Array2<T>)> {
    info_nce_loss_with(sim, groups, cfg, Execution::Deterministic)
}

pub fn info_nce_loss_with<T: Scalar>(
    sim: &SimilarityMatrix<T>,
    groups: &GroupLabels,
    cfg: &ContrastiveConfig,
    execution: Execution,
) -> Result<(T, Array2<T>)> {
    cfg.validate()?;
    let n = sim.len();
    if groups.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} group labels for a {n}x{n} similarity matrix",
            groups.len()
        )));
    }
    let partner = partners(groups, cfg.pairing)?;
    let s = sim.as_array();
    let t = T::of(cfg.temperature);
    let anchor = |i: usize| -> (T, Vec<T>) {
        let logits: Vec<T> = (0..n).map(|j| s[[i, j]] / t).collect();
        let max = (0..n).filter(|&j| j != i).map(|j| logits[j]).fold(T::neg_infinity(), T::max);
        let mut probs = vec![T::zero(); n];
        let mut z = T::zero();
        for j in (0..n).filter(|&j| j != i) {
            probs[j] = (logits[j] - max).exp();
            z += probs[j];
        }
        let loss = max + z.ln() - logits[partner[i]];
        probs.iter_mut().for_each(|p| *p /= z);
        (loss, probs)
    };
    let rows: Vec<(T, Vec<T>)> = match execution {
        Execution::Deterministic => (0..n).map(anchor).collect(),
        Execution::Parallel => (0..n).into_par_iter().map(anchor).collect(),
    };
    let scale = T::one() / (t * T::of_usize(n));
    let mut grad = Array2::zeros((n, n));
    let mut losses = Vec::with_capacity(n);
    for (i, (loss, probs)) in rows.into_iter().enumerate() {
        losses.push(loss);
        for (j, p) in probs.into_iter().enumerate() {
            if j != i {
                grad[[i, j]] = p * scale;
            }
        }
        grad[[i, partner[i]]] -= scale;
    }
    Ok((pairwise_sum(&losses) / T::of_usize(n), grad))
}
