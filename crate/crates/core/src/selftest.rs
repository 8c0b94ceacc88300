//! Built-in numerical checks run by the `selftest` CLI verb.
//!
//! Each check compares a library routine against an independent reference: ranks by
//! brute-force counting, gradients by central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{info_nce_loss, ContrastiveConfig};
use crate::embedding::{backprop_similarity, cosine_similarity_matrix};
use crate::encoder::{backward, forward, init_params, EncoderConfig};
use crate::ranking::{batch_smooth_ap_loss, exact_ap, smooth_ap, smooth_ap_grad, GroupLabels, SmoothingConfig};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const FD_STEP: f64 = 1e-6;

fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
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

/// Gradients below this are compared on an absolute scale; central differences at
/// `FD_STEP` carry round-off near `1e-10`.
const SCALE_FLOOR: f64 = 1e-5;

/// Largest component error relative to the gradient's overall scale, so that components
/// near zero are not swamped by finite-difference round-off.
fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(SCALE_FLOOR, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).map(|(&a, &n)| (a - n).abs() / scale).fold(0.0, f64::max)
}

fn brute_force_ap(scores: &[f64], pos: &[bool]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for i in 0..scores.len() {
        if !pos[i] {
            continue;
        }
        n += 1;
        let above_all = (0..scores.len()).filter(|&j| j != i && scores[j] > scores[i]).count();
        let above_pos = (0..scores.len()).filter(|&j| j != i && pos[j] && scores[j] > scores[i]).count();
        acc += (1 + above_pos) as f64 / (1 + above_all) as f64;
    }
    acc / n as f64
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize) -> (Vec<f64>, Vec<bool>) {
    let scores: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut pos: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
    pos[0] = true;
    pos[m - 1] = false;
    (scores, pos)
}

fn check_exact_ap(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut max_err = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..40);
        let (mut scores, pos) = random_instance(rng, m);
        // Quantize to force ties.
        scores.iter_mut().for_each(|s| *s = (*s * 5.0).round() / 5.0);
        let ap = exact_ap(&scores, &pos).unwrap_or(f64::NAN);
        max_err = max_err.max((ap - brute_force_ap(&scores, &pos)).abs());
    }
    CheckOutcome { name: "exact_ap vs brute-force ranks", passed: max_err < 1e-12, detail: format!("max abs err {max_err:e}") }
}

fn check_smooth_limit(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cfg = SmoothingConfig::new(1e-6).expect("valid tau");
    let mut max_err = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(4..32);
        // Distinct scores on a grid with spacing 1e-2.
        let mut grid: Vec<i64> = (0..200).collect();
        for i in (1..grid.len()).rev() {
            grid.swap(i, rng.random_range(0..=i));
        }
        let scores: Vec<f64> = grid[..m].iter().map(|&g| -1.0 + 1e-2 * g as f64).collect();
        let (_, pos) = random_instance(rng, m);
        let e = exact_ap(&scores, &pos).unwrap_or(f64::NAN);
        let s = smooth_ap(&scores, &pos, &cfg).unwrap_or(f64::NAN);
        max_err = max_err.max((e - s).abs());
    }
    CheckOutcome { name: "smooth_ap -> exact_ap as tau -> 0", passed: max_err <= 1e-4, detail: format!("max abs err {max_err:e}") }
}

fn check_smooth_grad(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cfg = SmoothingConfig::new(0.05).expect("valid tau");
    let mut err = 0.0f64;
    for _ in 0..20 {
        let (scores, pos) = random_instance(rng, 8);
        let g = smooth_ap_grad(&scores, &pos, &cfg).unwrap_or_default();
        let n = central_difference(&mut |x| smooth_ap(x, &pos, &cfg).unwrap_or(f64::NAN), &scores);
        err = err.max(worst(&g, &n));
    }
    CheckOutcome { name: "smooth_ap_grad vs finite differences", passed: err <= 1e-4, detail: format!("max rel err {err:e}") }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn check_similarity_backprop(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut err = 0.0f64;
    for _ in 0..10 {
        let x = random_matrix(rng, 4, 3);
        let gs = random_matrix(rng, 4, 4);
        let analytic = backprop_similarity(x.view(), gs.view()).map(|g| g.into_raw_vec_and_offset().0).unwrap_or_default();
        let flat = x.clone().into_raw_vec_and_offset().0;
        let numeric = central_difference(
            &mut |v| {
                let m = Array2::from_shape_vec((4, 3), v.to_vec()).expect("shape");
                cosine_similarity_matrix(m.view()).map(|s| (s.as_array() * &gs).sum()).unwrap_or(f64::NAN)
            },
            &flat,
        );
        err = err.max(worst(&analytic, &numeric));
    }
    CheckOutcome { name: "backprop_similarity vs finite differences", passed: err <= 1e-4, detail: format!("max rel err {err:e}") }
}

fn check_end_to_end(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cfg = EncoderConfig { input_dim: 3, hidden_dims: vec![4], rep_dim: 4, proj_hidden_dim: 4, proj_out_dim: 3, seed: rng.random(), ..Default::default() };
    let Ok(mut params) = init_params::<f64>(&cfg) else {
        return CheckOutcome { name: "end-to-end gradient", passed: false, detail: "init failed".into() };
    };
    // Nonzero biases keep pre-activations off the ReLU kink.
    let generic: Vec<f64> = (0..params.num_parameters()).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.set_flat(&generic).expect("length");
    let x = random_matrix(rng, 4, 3);
    let groups = GroupLabels::contiguous(2, 2).expect("valid groups");
    let smoothing = SmoothingConfig::new(0.5).expect("valid tau");
    let loss_of = |p: &crate::encoder::EncoderParams<f64>| -> f64 {
        forward(p, x.view())
            .and_then(|o| cosine_similarity_matrix(o.projections.view()))
            .and_then(|s| batch_smooth_ap_loss(&s, &groups, &smoothing))
            .map(|r| r.loss)
            .unwrap_or(f64::NAN)
    };
    let analytic = (|| {
        let out = forward(&params, x.view())?;
        let sim = cosine_similarity_matrix(out.projections.view())?;
        let res = batch_smooth_ap_loss(&sim, &groups, &smoothing)?;
        let gp = backprop_similarity(out.projections.view(), res.grad_wrt_similarities.view())?;
        Ok::<_, crate::Error>(backward(&params, &out.cache, gp.view())?.flatten())
    })()
    .unwrap_or_default();
    let theta = params.flatten();
    let mut probe = params.clone();
    let numeric = central_difference(
        &mut |v| {
            probe.set_flat(v).expect("length");
            loss_of(&probe)
        },
        &theta,
    );
    let err = worst(&analytic, &numeric);
    CheckOutcome { name: "end-to-end encoder gradient", passed: err <= 1e-4, detail: format!("max rel err {err:e}") }
}

fn check_info_nce(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let x = random_matrix(rng, 6, 4);
    let groups = GroupLabels::contiguous(3, 2).expect("valid groups");
    let cfg = ContrastiveConfig::default();
    let Ok(sim) = cosine_similarity_matrix(x.view()) else {
        return CheckOutcome { name: "info_nce gradient", passed: false, detail: "degenerate input".into() };
    };
    let (_, g) = info_nce_loss(&sim, &groups, &cfg).expect("valid input");
    let s = sim.as_array().clone();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                continue;
            }
            // Perturb one entry without re-symmetrizing.
            let eval = |delta: f64| {
                let mut m = s.clone();
                m[[i, j]] += delta;
                info_nce_loss(&crate::embedding::SimilarityMatrix::from_array_unchecked(m), &groups, &cfg)
                    .map(|r| r.0)
                    .unwrap_or(f64::NAN)
            };
            analytic.push(g[[i, j]]);
            numeric.push((eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
        }
    }
    let err = worst(&analytic, &numeric);
    CheckOutcome { name: "info_nce gradient vs finite differences", passed: err <= 1e-4, detail: format!("max rel err {err:e}") }
}

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_exact_ap(&mut rng),
        check_smooth_limit(&mut rng),
        check_smooth_grad(&mut rng),
        check_similarity_backprop(&mut rng),
        check_end_to_end(&mut rng),
        check_info_nce(&mut rng),
    ]
}
