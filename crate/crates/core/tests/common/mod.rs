//! Reference implementations shared by the integration tests. Nothing here calls into
//! the library's ranking or gradient code.

#![allow(dead_code)]

use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

/// AP by literal rank counting.
pub fn brute_force_ap(scores: &[f64], positives: &[bool]) -> f64 {
    let rank = |i: usize, only_pos: bool| {
        1 + (0..scores.len())
            .filter(|&j| j != i && (!only_pos || positives[j]) && scores[j] > scores[i])
            .count()
    };
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| positives[i]).collect();
    pos.iter().map(|&i| rank(i, true) as f64 / rank(i, false) as f64).sum::<f64>() / pos.len() as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Finite differences at `FD_STEP` carry round-off near `1e-10`; gradients smaller than
/// this floor are compared on an absolute scale.
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-5;

/// Largest component error divided by the larger of the two gradients' max-norms.
pub fn gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(GRADIENT_SCALE_FLOOR, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / scale).fold(0.0, f64::max)
}

/// Scores with pairwise gaps of at least `margin`: distinct grid points, shuffled.
pub fn separated_scores<R: Rng>(rng: &mut R, m: usize, margin: f64) -> Vec<f64> {
    let mut grid: Vec<usize> = (0..4 * m).collect();
    for i in (1..grid.len()).rev() {
        grid.swap(i, rng.random_range(0..=i));
    }
    grid[..m].iter().map(|&g| -1.0 + margin * g as f64).collect()
}

/// Random mask with at least one positive and one negative.
pub fn random_mask<R: Rng>(rng: &mut R, m: usize) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
    let a = rng.random_range(0..m);
    let mut b = rng.random_range(0..m - 1);
    if b >= a {
        b += 1;
    }
    mask[a] = true;
    mask[b] = false;
    mask
}

/// `1 - mean AP` of a multi-view batch where each view queries every other view,
/// computed by brute force.
pub fn brute_force_batch_loss(sim: &ndarray::Array2<f64>, groups: &[usize]) -> f64 {
    let n = groups.len();
    let mut total = 0.0;
    for q in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        let scores: Vec<f64> = others.iter().map(|&j| sim[[q, j]]).collect();
        let mask: Vec<bool> = others.iter().map(|&j| groups[j] == groups[q]).collect();
        total += brute_force_ap(&scores, &mask);
    }
    1.0 - total / n as f64
}

/// Replaces every weight and bias with a uniform draw so that no pre-activation sits
/// exactly on a ReLU kink (zero-initialized biases can produce exact zeros).
pub fn randomize<R: Rng>(params: &mut s2r2::encoder::EncoderParams<f64>, rng: &mut R) {
    let theta: Vec<f64> = (0..params.num_parameters()).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.set_flat(&theta).unwrap();
}
