//! Properties of the ODE machinery on a net trained with the 2D protocol.
mod common;

use common::{median, trained_five_gaussians};
use cotfm_core::clustering::kmeans;
use cotfm_core::coupling::couple_reflow;
use cotfm_core::datasets::generate;
use cotfm_core::flow::{fit_cluster_sources, pull_back, push_forward, sample_source, GaussianSource};
use cotfm_core::rng::Stream;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn reverse_then_forward_returns_to_the_data() {
    let (cfg, net) = trained_five_gaussians();
    let mut spec = cfg.dataset.clone();
    spec.n = 1000;
    let targets = generate(&spec, 555).unwrap().points;
    let recovered = pull_back(net, &targets, 1000).unwrap();
    let back = push_forward(net, &recovered, 1000).unwrap();
    let errs: Vec<f64> = targets.iter().zip(&back).map(|(a, b)| dist(*a, *b)).collect();
    let within = errs.iter().filter(|&&e| e < 0.05).count();
    assert!(within >= 950, "only {within}/1000 within 0.05");
    assert!(median(errs) < 0.02);
}

#[test]
fn forward_then_reverse_returns_to_the_source() {
    let (cfg, net) = trained_five_gaussians();
    let src = sample_source(&GaussianSource::isotropic([0.0, 0.0], cfg.source_std).unwrap(), 1000, 9);
    let pushed = push_forward(net, &src.points, 1000).unwrap();
    let back = pull_back(net, &pushed, 1000).unwrap();
    let errs: Vec<f64> = src.points.iter().zip(&back).map(|(a, b)| dist(*a, *b)).collect();
    assert!(median(errs) < 0.02);
}

#[test]
fn fitted_cluster_sources_are_distinct_and_tighter_than_the_prior() {
    let (cfg, net) = trained_five_gaussians();
    let data = generate(&cfg.dataset, cfg.seeds.data).unwrap();
    let model = kmeans(&data, 5, 1, 300, 1e-6).unwrap();
    let sources = fit_cluster_sources(net, &model.split(&data), 100).unwrap();
    assert_eq!(sources.len(), 5);
    let prior_trace = 2.0 * cfg.source_std * cfg.source_std;
    for (i, a) in sources.iter().enumerate() {
        assert!(a.trace() < prior_trace, "cluster {i} trace {}", a.trace());
        for b in &sources[i + 1..] {
            assert!(dist(a.mu, b.mu) > 0.0);
        }
    }
}

#[test]
fn reflow_cost_is_stable_across_step_counts() {
    let (cfg, net) = trained_five_gaussians();
    let src = sample_source(&GaussianSource::isotropic([0.0, 0.0], cfg.source_std).unwrap(), 1000, 21);
    let (p100, _) = couple_reflow(net, &src, 100).unwrap();
    let (p200, _) = couple_reflow(net, &src, 200).unwrap();
    let rel = (p100.cost - p200.cost).abs() / p200.cost;
    assert!(rel < 0.05, "{} vs {}", p100.cost, p200.cost);
}

#[test]
fn euler_endpoints_converge_as_steps_double() {
    let (cfg, net) = trained_five_gaussians();
    let src = sample_source(&GaussianSource::isotropic([0.0, 0.0], cfg.source_std).unwrap(), 500, 3);
    let ends: Vec<Vec<[f64; 2]>> = [25usize, 50, 100, 200, 400]
        .iter()
        .map(|&t| push_forward(net, &src.points, t).unwrap())
        .collect();
    let gaps: Vec<f64> = ends
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| dist(*a, *b)).sum::<f64>() / w[0].len() as f64)
        .collect();
    for g in gaps.windows(2) {
        assert!(g[1] <= 1.2 * g[0], "gaps {gaps:?}");
    }
}

#[test]
fn mixture_draws_follow_their_components() {
    let (_, net) = trained_five_gaussians();
    let sources = vec![
        GaussianSource::isotropic([-4.0, 0.0], 0.1).unwrap(),
        GaussianSource::isotropic([4.0, 0.0], 0.1).unwrap(),
    ];
    let s = cotfm_core::flow::sample_cotfm(net, &sources, &[0.3, 0.7], 100_000, 10, 4).unwrap();
    let ones = s.components.iter().filter(|&&c| c == 1).count() as f64 / 1e5;
    assert!((ones - 0.7).abs() < 0.01);
    let mut rng = Stream::new(1);
    let i = rng.below(s.starts.len());
    assert!(dist(s.starts[i], sources[s.components[i]].mu) < 1.0);
}
