mod common;

use common::{fd_relative_error, reference_forward, reference_loss};
use cotfm_core::net::{adam_step, cfm_loss_and_grad, Activation, AdamConfig, AdamState, TrainBatch, VectorFieldNet};
use cotfm_core::rng::Stream;
use proptest::prelude::*;

fn random_batch(rng: &mut Stream, n: usize) -> TrainBatch {
    TrainBatch {
        x0: (0..n).map(|_| [rng.normal(), rng.normal()]).collect(),
        x1: (0..n).map(|_| [2.0 * rng.normal() + 1.0, rng.normal() - 0.5]).collect(),
        t: (0..n).map(|_| rng.uniform()).collect(),
    }
}

fn flatten(grads: &[cotfm_core::net::Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in grads {
        out.extend(l.weight.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

/// Worst relative error between the analytic gradient and central
/// differences of the reference loss.
fn max_fd_error(net: &VectorFieldNet, batch: &TrainBatch, h: f64) -> f64 {
    let (loss, grads) = cfm_loss_and_grad(net, batch).unwrap();
    let analytic = flatten(&grads);
    let sizes = net.layer_sizes().to_vec();
    let a = net.activation();
    let mut flat = net.flat_params();
    let mut worst: f64 = 0.0;
    for p in 0..flat.len() {
        let orig = flat[p];
        flat[p] = orig + h;
        let up = reference_loss(&sizes, a, &flat, &batch.x0, &batch.x1, &batch.t);
        flat[p] = orig - h;
        let down = reference_loss(&sizes, a, &flat, &batch.x0, &batch.x1, &batch.t);
        flat[p] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(fd_relative_error(analytic[p], fd, loss, h));
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences_over_100_draws() {
    let mut rng = Stream::new(2024);
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let h1 = 4 + rng.below(12);
        let h2 = 4 + rng.below(12);
        let act = if draw % 2 == 0 { Activation::Tanh } else { Activation::Silu };
        let net = VectorFieldNet::glorot(&[3, h1, h2, 2], act, 100 + draw).unwrap();
        let batch = random_batch(&mut rng, 8);
        worst = worst.max(max_fd_error(&net, &batch, 1e-5));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn default_architecture_gradient_check() {
    let mut rng = Stream::new(5);
    let net = VectorFieldNet::glorot(&[3, 64, 64, 64, 2], Activation::Tanh, 1).unwrap();
    let batch = random_batch(&mut rng, 8);
    let err = max_fd_error(&net, &batch, 1e-5);
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn forward_matches_loop_oracle() {
    for (seed, act) in [(1u64, Activation::Tanh), (2, Activation::Silu)] {
        let net = VectorFieldNet::glorot(&[3, 64, 64, 64, 2], act, seed).unwrap();
        let flat = net.flat_params();
        let mut rng = Stream::new(seed);
        for _ in 0..50 {
            let x = [3.0 * rng.normal(), 3.0 * rng.normal()];
            let t = rng.uniform();
            let got = net.forward(x, t);
            let want = reference_forward(net.layer_sizes(), act, &flat, x, t);
            for c in 0..2 {
                assert!((got[c] - want[c]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn loss_matches_reference_definition() {
    let mut rng = Stream::new(3);
    let net = VectorFieldNet::glorot(&[3, 16, 16, 2], Activation::Tanh, 9).unwrap();
    let batch = random_batch(&mut rng, 32);
    let (loss, _) = cfm_loss_and_grad(&net, &batch).unwrap();
    let want = reference_loss(net.layer_sizes(), net.activation(), &net.flat_params(), &batch.x0, &batch.x1, &batch.t);
    assert!((loss - want).abs() < 1e-12 * want.max(1.0));
}

#[test]
fn fixed_batch_loss_decreases_over_200_steps() {
    let mut rng = Stream::new(8);
    let mut net = VectorFieldNet::glorot(&[3, 64, 64, 64, 2], Activation::Tanh, 8).unwrap();
    let batch = random_batch(&mut rng, 64);
    let mut state = AdamState::new(&net, AdamConfig::default());
    let (initial, _) = cfm_loss_and_grad(&net, &batch).unwrap();
    for _ in 0..200 {
        let (_, g) = cfm_loss_and_grad(&net, &batch).unwrap();
        adam_step(&mut net, &mut state, &g).unwrap();
    }
    let (last, _) = cfm_loss_and_grad(&net, &batch).unwrap();
    assert_eq!(state.step, 200);
    assert!(last < initial, "{last} !< {initial}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_invariant_to_pair_order(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = Stream::new(seed);
        let net = VectorFieldNet::glorot(&[3, 16, 16, 2], Activation::Tanh, seed).unwrap();
        let batch = random_batch(&mut rng, n);
        let perm = rng.permutation(n);
        let shuffled = TrainBatch {
            x0: perm.iter().map(|&i| batch.x0[i]).collect(),
            x1: perm.iter().map(|&i| batch.x1[i]).collect(),
            t: perm.iter().map(|&i| batch.t[i]).collect(),
        };
        let (a, _) = cfm_loss_and_grad(&net, &batch).unwrap();
        let (b, _) = cfm_loss_and_grad(&net, &shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn parameters_stay_finite_after_updates(seed in any::<u64>()) {
        let mut rng = Stream::new(seed);
        let mut net = VectorFieldNet::glorot(&[3, 8, 2], Activation::Silu, seed).unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        for _ in 0..5 {
            let batch = random_batch(&mut rng, 16);
            let (_, g) = cfm_loss_and_grad(&net, &batch).unwrap();
            adam_step(&mut net, &mut state, &g).unwrap();
        }
        prop_assert!(net.flat_params().iter().all(|p| p.is_finite()));
        prop_assert_eq!(state.step, 5);
    }
}
