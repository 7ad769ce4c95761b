//! Euler transport along a learned velocity field, reverse-ODE source
//! recovery and per-cluster Gaussian sources.

use serde::{Deserialize, Serialize};

use crate::datasets::{empirical_moments, PointCloud};
use crate::error::{Error, Result};
use crate::net::VelocityField;
use crate::rng::Stream;
use crate::Vec2;

/// Diagonal jitter added to every fitted covariance before factorization.
pub const COV_JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

/// States on the uniform grid `0, 1/T, ..., 1`, always stored in increasing
/// time order regardless of integration direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec2>,
    pub t_grid: Vec<f64>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Where integration finished: time 1 going forward, time 0 in reverse.
    pub fn endpoint(&self) -> Vec2 {
        match self.direction {
            Direction::Forward => *self.states.last().unwrap(),
            Direction::Reverse => self.states[0],
        }
    }

    pub fn start(&self) -> Vec2 {
        match self.direction {
            Direction::Forward => self.states[0],
            Direction::Reverse => *self.states.last().unwrap(),
        }
    }
}

fn time_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::parameter("steps", "must be at least 1"));
    }
    Ok(())
}

fn diverged(step: usize, sample: usize) -> Error {
    Error::Divergence(format!("non-finite state at step {step} (sample {sample})"))
}

/// Shared Euler loop. `record` receives the states after every step.
fn euler<F: VelocityField>(
    field: &F,
    xs: &mut [Vec2],
    steps: usize,
    direction: Direction,
    mut record: impl FnMut(&[Vec2]),
) -> Result<()> {
    check_steps(steps)?;
    let dt = 1.0 / steps as f64;
    for s in 0..steps {
        let (t, sign) = match direction {
            Direction::Forward => (s as f64 / steps as f64, 1.0),
            Direction::Reverse => ((steps - s) as f64 / steps as f64, -1.0),
        };
        let v = field.velocity_batch(xs, t);
        for (i, (x, v)) in xs.iter_mut().zip(&v).enumerate() {
            x[0] += sign * v[0] * dt;
            x[1] += sign * v[1] * dt;
            if !(x[0].is_finite() && x[1].is_finite()) {
                return Err(diverged(s + 1, i));
            }
        }
        record(xs);
    }
    Ok(())
}

/// `x <- x + v(x, s/T) / T` for `s = 0..T`.
pub fn integrate_forward<F: VelocityField>(field: &F, x0: Vec2, steps: usize) -> Result<Trajectory> {
    let mut trajs = forward_trajectories(field, &[x0], steps)?;
    Ok(trajs.pop().unwrap())
}

/// `x <- x - v(x, t) / T` with `t = 1, 1 - 1/T, ..., 1/T`; the trajectory's
/// endpoint is the recovered source point.
pub fn integrate_reverse<F: VelocityField>(field: &F, x1: Vec2, steps: usize) -> Result<Trajectory> {
    let mut trajs = reverse_trajectories(field, &[x1], steps)?;
    Ok(trajs.pop().unwrap())
}

pub fn forward_trajectories<F: VelocityField>(
    field: &F,
    starts: &[Vec2],
    steps: usize,
) -> Result<Vec<Trajectory>> {
    let mut states: Vec<Vec<Vec2>> = starts.iter().map(|&x| vec![x]).collect();
    let mut xs = starts.to_vec();
    euler(field, &mut xs, steps, Direction::Forward, |cur| {
        for (s, x) in states.iter_mut().zip(cur) {
            s.push(*x);
        }
    })?;
    let grid = time_grid(steps);
    Ok(states
        .into_iter()
        .map(|states| Trajectory {
            states,
            t_grid: grid.clone(),
            direction: Direction::Forward,
        })
        .collect())
}

pub fn reverse_trajectories<F: VelocityField>(
    field: &F,
    ends: &[Vec2],
    steps: usize,
) -> Result<Vec<Trajectory>> {
    let mut states: Vec<Vec<Vec2>> = ends.iter().map(|&x| vec![x]).collect();
    let mut xs = ends.to_vec();
    euler(field, &mut xs, steps, Direction::Reverse, |cur| {
        for (s, x) in states.iter_mut().zip(cur) {
            s.push(*x);
        }
    })?;
    let grid = time_grid(steps);
    Ok(states
        .into_iter()
        .map(|mut states| {
            states.reverse();
            Trajectory {
                states,
                t_grid: grid.clone(),
                direction: Direction::Reverse,
            }
        })
        .collect())
}

/// Forward endpoints only.
pub fn push_forward<F: VelocityField>(field: &F, starts: &[Vec2], steps: usize) -> Result<Vec<Vec2>> {
    let mut xs = starts.to_vec();
    euler(field, &mut xs, steps, Direction::Forward, |_| {})?;
    Ok(xs)
}

/// Reverse endpoints only: the recovered source of every point.
pub fn pull_back<F: VelocityField>(field: &F, ends: &[Vec2], steps: usize) -> Result<Vec<Vec2>> {
    let mut xs = ends.to_vec();
    euler(field, &mut xs, steps, Direction::Reverse, |_| {})?;
    Ok(xs)
}

/// A full-covariance Gaussian with its cached Cholesky factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSource {
    pub mu: Vec2,
    pub sigma: [[f64; 2]; 2],
    pub n_fit: usize,
    #[serde(skip)]
    chol: [[f64; 2]; 2],
}

impl GaussianSource {
    pub fn new(mu: Vec2, sigma: [[f64; 2]; 2], n_fit: usize) -> Result<Self> {
        let finite = mu.iter().chain(sigma.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::parameter("sigma", "non-finite Gaussian parameters"));
        }
        // symmetrize exactly; callers pass the biased sample covariance
        let off = 0.5 * (sigma[0][1] + sigma[1][0]);
        let sigma = [[sigma[0][0], off], [off, sigma[1][1]]];
        let chol = cholesky_2x2(sigma, COV_JITTER)?;
        Ok(Self {
            mu,
            sigma,
            n_fit,
            chol,
        })
    }

    pub fn isotropic(mu: Vec2, std: f64) -> Result<Self> {
        Self::new(mu, [[std * std, 0.0], [0.0, std * std]], 0)
    }

    /// Lower-triangular factor of `sigma + jitter * I`.
    pub fn chol(&self) -> [[f64; 2]; 2] {
        self.chol
    }

    /// Rebuild the cached factor, e.g. after deserializing.
    pub fn refresh(self) -> Result<Self> {
        Self::new(self.mu, self.sigma, self.n_fit)
    }

    pub fn transform(&self, z: Vec2) -> Vec2 {
        let l = self.chol;
        [
            self.mu[0] + l[0][0] * z[0],
            self.mu[1] + l[1][0] * z[0] + l[1][1] * z[1],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.sigma[0][0] + self.sigma[1][1]
    }
}

fn cholesky_2x2(sigma: [[f64; 2]; 2], jitter: f64) -> Result<[[f64; 2]; 2]> {
    let a = sigma[0][0] + jitter;
    if a <= 0.0 {
        return Err(Error::parameter("sigma", "covariance is not positive semidefinite"));
    }
    let l00 = a.sqrt();
    let l10 = sigma[1][0] / l00;
    let rest = sigma[1][1] + jitter - l10 * l10;
    if rest < -1e-10 {
        return Err(Error::parameter("sigma", "covariance is not positive semidefinite"));
    }
    Ok([[l00, 0.0], [l10, rest.max(0.0).sqrt()]])
}

/// `n` draws of `mu + L z`, deterministic in `seed`.
pub fn sample_source(gs: &GaussianSource, n: usize, seed: u64) -> PointCloud {
    let mut rng = Stream::new(seed);
    let points = (0..n)
        .map(|_| {
            let z = [rng.normal(), rng.normal()];
            gs.transform(z)
        })
        .collect();
    PointCloud::new(points, seed, "gaussian_source")
}

/// Reverse-integrate every member of every cluster and fit a Gaussian to the
/// recovered points of each cluster (mean and 1/n covariance).
pub fn fit_cluster_sources<F: VelocityField>(
    field: &F,
    clusters: &[PointCloud],
    steps: usize,
) -> Result<Vec<GaussianSource>> {
    Ok(fit_cluster_sources_with_points(field, clusters, steps)?.0)
}

/// Like [`fit_cluster_sources`], also returning the recovered points.
pub fn fit_cluster_sources_with_points<F: VelocityField>(
    field: &F,
    clusters: &[PointCloud],
    steps: usize,
) -> Result<(Vec<GaussianSource>, Vec<Vec<Vec2>>)> {
    check_steps(steps)?;
    let mut sources = Vec::with_capacity(clusters.len());
    let mut recovered = Vec::with_capacity(clusters.len());
    for (k, cluster) in clusters.iter().enumerate() {
        if cluster.is_empty() {
            return Err(Error::EmptyInput("cluster"));
        }
        let x0 = pull_back(field, &cluster.points, steps).map_err(|e| match e {
            Error::Divergence(msg) => Error::Divergence(format!("cluster {k}: {msg}")),
            other => other,
        })?;
        let (mu, sigma) = empirical_moments(&x0)?;
        sources.push(GaussianSource::new(mu, sigma, x0.len())?);
        recovered.push(x0);
    }
    Ok((sources, recovered))
}

pub fn validate_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::Shape(format!("{} weights for {k} sources", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::parameter("weights", "must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::parameter("weights", format!("sum to {total}, not 1")));
    }
    Ok(())
}

/// Initial points of the mixture sampler: for sample `i`, a stream derived
/// from `(seed, i)` picks a component by `weights` and draws from it.
pub fn draw_mixture(
    sources: &[GaussianSource],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec2>, Vec<usize>)> {
    if sources.is_empty() {
        return Err(Error::EmptyInput("source list"));
    }
    validate_weights(weights, sources.len())?;
    let mut points = Vec::with_capacity(n);
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Stream::derived(seed, i as u64);
        let k = rng.categorical(weights);
        let z = [rng.normal(), rng.normal()];
        points.push(sources[k].transform(z));
        components.push(k);
    }
    Ok((points, components))
}

/// Output of the mixture sampler.
#[derive(Clone, Debug)]
pub struct MixtureSample {
    pub starts: Vec<Vec2>,
    pub components: Vec<usize>,
    pub points: PointCloud,
}

/// Pick a cluster, draw from its source, push forward `steps` Euler steps.
pub fn sample_cotfm<F: VelocityField>(
    field: &F,
    sources: &[GaussianSource],
    weights: &[f64],
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<MixtureSample> {
    let (starts, components) = draw_mixture(sources, weights, n, seed)?;
    let ends = push_forward(field, &starts, steps)?;
    Ok(MixtureSample {
        starts,
        components,
        points: PointCloud::new(ends, seed, "generated"),
    })
}
