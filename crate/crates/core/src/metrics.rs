//! Evaluation metrics: exact squared 2-Wasserstein between equal-size
//! empirical measures, trajectory curvature and OT wall-clock timing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coupling::{cost_matrix, solve_assignment};
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::Vec2;

/// Segments shorter than this inherit the previous unit tangent.
pub const MIN_SEGMENT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Squared 2-Wasserstein distance.
    pub wasserstein2: f64,
    /// Its square root, logged for convenience.
    pub wasserstein: f64,
    pub curvature: f64,
    pub nfe: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub wall_ms: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn wall_ms_total(&self) -> f64 {
        self.wall_ms.values().sum()
    }
}

/// `(1/n) * min_sigma sum ||a_i - b_sigma(i)||^2`.
pub fn wasserstein2(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "wasserstein2 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    let plan = solve_assignment(&cost_matrix(a, b))?;
    Ok(plan.cost / a.len() as f64)
}

/// Mean squared change of unit tangents along one polyline,
/// `(1/(T-1)) * sum_i ||u_{i+1} - u_i||^2` over `T` segments.
pub fn path_curvature(states: &[Vec2]) -> Result<f64> {
    if states.len() < 3 {
        return Err(Error::parameter(
            "trajectory",
            format!("curvature needs at least 2 segments, got {}", states.len().saturating_sub(1)),
        ));
    }
    let segments = states.len() - 1;
    let mut units: Vec<Option<Vec2>> = states
        .windows(2)
        .map(|w| {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let len = d[0].hypot(d[1]);
            (len >= MIN_SEGMENT).then(|| [d[0] / len, d[1] / len])
        })
        .collect();
    let Some(first) = units.iter().flatten().next().copied() else {
        return Ok(0.0);
    };
    // leading degenerate segments take the first real direction, later ones
    // carry the previous direction forward
    let mut prev = first;
    for u in &mut units {
        match u {
            Some(v) => prev = *v,
            None => *u = Some(prev),
        }
    }
    let total: f64 = units
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].unwrap(), w[1].unwrap());
            (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)
        })
        .sum();
    Ok(total / (segments - 1) as f64)
}

/// Mean of [`path_curvature`] over trajectories.
pub fn curvature(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput("trajectory list"));
    }
    let mut total = 0.0;
    for tr in trajs {
        total += path_curvature(&tr.states)?;
    }
    Ok(total / trajs.len() as f64)
}

/// Wall-clock milliseconds spent in `build`, together with its result.
pub fn time_ot_epoch<T>(build: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = build()?;
    Ok((start.elapsed().as_secs_f64() * 1e3, out))
}

/// Solve one exact assignment per chunk, pairing `sources[c]` with
/// `targets[c]`. Returns the number of solves.
pub fn solve_chunks(sources: &[Vec<Vec2>], targets: &[Vec<Vec2>]) -> Result<usize> {
    if sources.len() != targets.len() {
        return Err(Error::Shape("chunk lists differ in length".into()));
    }
    for (s, t) in sources.iter().zip(targets) {
        solve_assignment(&cost_matrix(s, t))?;
    }
    Ok(sources.len())
}
