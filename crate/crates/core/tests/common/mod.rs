//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use cotfm_core::datasets::DatasetKind;
use cotfm_core::net::{Activation, VectorFieldNet};
use cotfm_core::pipeline::{self, Audit, ExperimentConfig, Method};
use cotfm_core::rng::Stream;
use cotfm_core::Vec2;

/// Minimum assignment cost by enumerating all n! permutations (Heap's algorithm).
pub fn brute_force_assignment(cost: &[f64], n: usize) -> (f64, Vec<Vec<usize>>) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut argmins = Vec::new();
    let mut consider = |p: &[usize]| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if c < best - 1e-12 {
            best = c;
            argmins.clear();
            argmins.push(p.to_vec());
        } else if (c - best).abs() <= 1e-12 {
            argmins.push(p.to_vec());
        }
    };
    consider(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            consider(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best, argmins)
}

pub fn random_points(rng: &mut Stream, n: usize, scale: f64) -> Vec<Vec2> {
    (0..n)
        .map(|_| [rng.uniform_range(-scale, scale), rng.uniform_range(-scale, scale)])
        .collect()
}

pub fn sq(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Silu => z / (1.0 + (-z).exp()),
    }
}

/// Forward pass from the flat parameter vector with plain loops, no ndarray.
pub fn reference_forward(sizes: &[usize], a: Activation, flat: &[f64], x: Vec2, t: f64) -> Vec2 {
    let mut h = vec![x[0], x[1], t];
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &flat[off..off + fan_in * fan_out];
        let b = &flat[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut s = b[o];
            for i in 0..fan_in {
                s += w[o * fan_in + i] * h[i];
            }
            z[o] = if l + 1 < layers { act(a, s) } else { s };
        }
        h = z;
    }
    [h[0], h[1]]
}

/// CFM loss from the definition, using [`reference_forward`].
pub fn reference_loss(sizes: &[usize], a: Activation, flat: &[f64], x0: &[Vec2], x1: &[Vec2], t: &[f64]) -> f64 {
    let n = x0.len();
    let mut total = 0.0;
    for k in 0..n {
        let xt = [
            (1.0 - t[k]) * x0[k][0] + t[k] * x1[k][0],
            (1.0 - t[k]) * x0[k][1] + t[k] * x1[k][1],
        ];
        let v = reference_forward(sizes, a, flat, xt, t[k]);
        total += (v[0] - (x1[k][0] - x0[k][0])).powi(2) + (v[1] - (x1[k][1] - x0[k][1])).powi(2);
    }
    total / n as f64
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Rectified-flow net on 5-Gaussians with the 2D protocol, trained once per test binary.
pub fn trained_five_gaussians() -> &'static (ExperimentConfig, VectorFieldNet) {
    static NET: OnceLock<(ExperimentConfig, VectorFieldNet)> = OnceLock::new();
    NET.get_or_init(|| {
        let cfg = ExperimentConfig::protocol_2d(DatasetKind::FiveGaussians, Method::RectifiedFlow);
        let (train, _) = pipeline::prepare_data(&cfg).unwrap();
        let mut audit = Audit::default();
        let (net, _) = pipeline::pretrain(&cfg, &train, &mut audit).unwrap();
        (cfg, net)
    })
}

/// Relative error of an analytic derivative against a central difference.
/// A difference quotient of losses near `loss` carries round-off of about
/// `eps * loss / h`; below `1e4` times that magnitude a relative error of
/// 1e-4 is indistinguishable from noise, so the denominator is floored there.
pub fn fd_relative_error(analytic: f64, fd: f64, loss: f64, h: f64) -> f64 {
    let floor = 1e4 * f64::EPSILON * loss.abs().max(1.0) / h;
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}
