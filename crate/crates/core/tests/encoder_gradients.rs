mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s2r2::embedding::{backprop_similarity, cosine_similarity_matrix};
use s2r2::encoder::{adam_step, backward, forward, init_params, EncoderConfig, EncoderParams, OptimizerConfig};
use s2r2::ranking::{batch_smooth_ap_loss, GroupLabels, SmoothingConfig};

use common::{central_difference, gradient_error, randomize};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_filter("rows away from zero", move |v| v.chunks(cols).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-4))
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(x in matrix(5, 4), c in 1e-3f64..1e3) {
        let a = cosine_similarity_matrix(x.view()).unwrap();
        let b = cosine_similarity_matrix((&x * c).view()).unwrap();
        for (u, v) in a.as_array().iter().zip(b.as_array()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_gradient_has_no_radial_component(x in matrix(5, 4), gs in matrix(5, 5)) {
        let g = backprop_similarity(x.view(), gs.view()).unwrap();
        for (gu, xu) in g.rows().into_iter().zip(x.rows()) {
            let radial = gu.dot(&xu) / xu.dot(&xu).sqrt();
            prop_assert!(radial.abs() < 1e-10, "radial component {}", radial);
        }
    }
}

#[test]
fn similarity_gradient_four_by_three_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
    let gs = Array2::from_shape_simple_fn((4, 4), || rng.random_range(-1.0..1.0));
    let analytic = backprop_similarity(x.view(), gs.view()).unwrap();
    let numeric = central_difference(
        &mut |v| {
            let m = Array2::from_shape_vec((4, 3), v.to_vec()).unwrap();
            (cosine_similarity_matrix(m.view()).unwrap().as_array() * &gs).sum()
        },
        &x.iter().copied().collect::<Vec<_>>(),
    );
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
    }
}

fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig { input_dim: 3, hidden_dims: vec![4], rep_dim: 4, proj_hidden_dim: 4, proj_out_dim: 2, seed, ..Default::default() }
}

fn end_to_end_loss(params: &EncoderParams<f64>, x: &Array2<f64>, groups: &GroupLabels, cfg: &SmoothingConfig) -> f64 {
    let out = forward(params, x.view()).unwrap();
    let sim = cosine_similarity_matrix(out.projections.view()).unwrap();
    batch_smooth_ap_loss(&sim, groups, cfg).unwrap().loss
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let groups = GroupLabels::contiguous(2, 2).unwrap();
    let smoothing = SmoothingConfig::new(0.5).unwrap();
    for seed in 0..20 {
        let mut params = init_params::<f64>(&tiny_config(seed)).unwrap();
        randomize(&mut params, &mut rng);
        let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));

        let out = forward(&params, x.view()).unwrap();
        let sim = cosine_similarity_matrix(out.projections.view()).unwrap();
        let res = batch_smooth_ap_loss(&sim, &groups, &smoothing).unwrap();
        let gp = backprop_similarity(out.projections.view(), res.grad_wrt_similarities.view()).unwrap();
        let analytic = backward(&params, &out.cache, gp.view()).unwrap().flatten();

        let mut probe = params.clone();
        let numeric = central_difference(
            &mut |theta| {
                probe.set_flat(theta).unwrap();
                end_to_end_loss(&probe, &x, &groups, &smoothing)
            },
            &params.flatten(),
        );
        let err = gradient_error(&analytic, &numeric);
        assert!(err <= 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn adam_reduces_loss_on_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = EncoderConfig { input_dim: 8, hidden_dims: vec![32], rep_dim: 16, proj_hidden_dim: 32, proj_out_dim: 8, seed: 5, ..Default::default() };
    let mut params = init_params::<f64>(&cfg).unwrap();
    let groups = GroupLabels::contiguous(4, 4).unwrap();
    let centers = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0..1.0));
    let x = Array2::from_shape_fn((16, 8), |(i, j)| centers[[i / 4, j]] + 0.8 * rng.random_range(-1.0..1.0));
    let smoothing = SmoothingConfig::new(0.1).unwrap();
    let opt = OptimizerConfig { learning_rate: 1e-2, ..Default::default() };

    let mut losses = Vec::new();
    for _ in 0..50 {
        let out = forward(&params, x.view()).unwrap();
        let sim = cosine_similarity_matrix(out.projections.view()).unwrap();
        let res = batch_smooth_ap_loss(&sim, &groups, &smoothing).unwrap();
        losses.push(res.loss);
        let gp = backprop_similarity(out.projections.view(), res.grad_wrt_similarities.view()).unwrap();
        let grads = backward(&params, &out.cache, gp.view()).unwrap();
        adam_step(&mut params, &grads, &opt).unwrap();
    }
    let last = end_to_end_loss(&params, &x, &groups, &smoothing);
    assert!(last <= 0.8 * losses[0], "loss {} -> {last}", losses[0]);
    let first_half: f64 = losses[..25].iter().sum::<f64>() / 25.0;
    let second_half: f64 = losses[25..].iter().sum::<f64>() / 25.0;
    assert!(second_half < first_half);
}

#[test]
fn parameter_trajectory_is_bit_identical() {
    let run = || {
        let cfg = EncoderConfig { input_dim: 6, hidden_dims: vec![8], rep_dim: 6, proj_hidden_dim: 6, proj_out_dim: 4, seed: 9, ..Default::default() };
        let mut params = init_params::<f32>(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-1.0f32..1.0));
        let groups = GroupLabels::contiguous(4, 2).unwrap();
        let smoothing = SmoothingConfig::default();
        let mut trajectory = Vec::new();
        for _ in 0..10 {
            let out = forward(&params, x.view()).unwrap();
            let sim = cosine_similarity_matrix(out.projections.view()).unwrap();
            let res = batch_smooth_ap_loss(&sim, &groups, &smoothing).unwrap();
            let gp = backprop_similarity(out.projections.view(), res.grad_wrt_similarities.view()).unwrap();
            let grads = backward(&params, &out.cache, gp.view()).unwrap();
            adam_step(&mut params, &grads, &OptimizerConfig::default()).unwrap();
            trajectory.push(params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        trajectory
    };
    assert_eq!(run(), run());
}
