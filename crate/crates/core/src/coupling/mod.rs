//! Source-target pairing strategies.
//!
//! Every strategy produces a [`CouplingPlan`]: a bijection between source
//! and target indices plus its total squared-Euclidean cost.

mod lap;

use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::flow;
use crate::net::VelocityField;
use crate::rng::Stream;
use crate::{sq_dist, Vec2};

pub use lap::solve as solve_dense;

/// Default number of points above which a cluster is split into shards
/// before exact assignment.
pub const DEFAULT_LAP_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    /// One global exact assignment.
    Exact,
    BatchOt,
    ClusterOt,
    Reflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingPlan {
    /// `(source_index, target_index)`, sorted by source index.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    pub strategy: Strategy,
}

impl CouplingPlan {
    fn from_pairs(
        mut pairs: Vec<(usize, usize)>,
        src: &[Vec2],
        tgt: &[Vec2],
        strategy: Strategy,
    ) -> Self {
        pairs.sort_unstable();
        let cost = pair_cost(&pairs, src, tgt);
        Self {
            pairs,
            cost,
            strategy,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Each of `0..n` appears exactly once on each side.
    pub fn is_bijection(&self, n: usize) -> bool {
        if self.pairs.len() != n {
            return false;
        }
        let mut seen_s = vec![false; n];
        let mut seen_t = vec![false; n];
        for &(s, t) in &self.pairs {
            if s >= n || t >= n || seen_s[s] || seen_t[t] {
                return false;
            }
            seen_s[s] = true;
            seen_t[t] = true;
        }
        true
    }

    pub fn recompute_cost(&self, src: &PointCloud, tgt: &PointCloud) -> f64 {
        pair_cost(&self.pairs, &src.points, &tgt.points)
    }

    /// Target index for each source index. Requires a bijection.
    pub fn target_for_source(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.pairs.len()];
        for &(s, t) in &self.pairs {
            out[s] = t;
        }
        out
    }
}

fn pair_cost(pairs: &[(usize, usize)], src: &[Vec2], tgt: &[Vec2]) -> f64 {
    pairs.iter().map(|&(s, t)| sq_dist(src[s], tgt[t])).sum()
}

/// Pairwise squared Euclidean distances, row-major `n x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub entries: Vec<f64>,
    pub n: usize,
    pub m: usize,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut entries = vec![0.0; self.entries.len()];
        for i in 0..self.n {
            for j in 0..self.m {
                entries[j * self.n + i] = self.get(i, j);
            }
        }
        CostMatrix {
            entries,
            n: self.m,
            m: self.n,
        }
    }
}

pub fn cost_matrix(src: &[Vec2], tgt: &[Vec2]) -> CostMatrix {
    let mut entries = Vec::with_capacity(src.len() * tgt.len());
    for &a in src {
        entries.extend(tgt.iter().map(|&b| sq_dist(a, b)));
    }
    CostMatrix {
        entries,
        n: src.len(),
        m: tgt.len(),
    }
}

/// Minimum-cost perfect matching of a square cost matrix.
pub fn solve_assignment(cost: &CostMatrix) -> Result<CouplingPlan> {
    if cost.n != cost.m {
        return Err(Error::Shape(format!(
            "assignment needs a square cost matrix, got {}x{}",
            cost.n, cost.m
        )));
    }
    let (cols, total) = lap::solve(&cost.entries, cost.n)?;
    Ok(CouplingPlan {
        pairs: cols.into_iter().enumerate().collect(),
        cost: total,
        strategy: Strategy::Exact,
    })
}

fn check_equal(src: &[Vec2], tgt: &[Vec2]) -> Result<()> {
    if src.len() != tgt.len() {
        return Err(Error::Shape(format!(
            "source has {} points, target has {}",
            src.len(),
            tgt.len()
        )));
    }
    Ok(())
}

/// Uniformly random bijection.
pub fn couple_random(src: &[Vec2], tgt: &[Vec2], seed: u64) -> Result<CouplingPlan> {
    check_equal(src, tgt)?;
    let perm = Stream::new(seed).permutation(src.len());
    let pairs = perm.into_iter().enumerate().collect();
    Ok(CouplingPlan::from_pairs(pairs, src, tgt, Strategy::Random))
}

/// Shuffle both sides with `seed`, cut into consecutive shards of at most
/// `batch` points and solve each shard exactly.
pub fn couple_batch_ot(src: &[Vec2], tgt: &[Vec2], batch: usize, seed: u64) -> Result<CouplingPlan> {
    check_equal(src, tgt)?;
    if batch == 0 {
        return Err(Error::parameter("batch", "must be at least 1"));
    }
    let pairs = sharded_assignment(src, tgt, batch, seed)?;
    Ok(CouplingPlan::from_pairs(pairs, src, tgt, Strategy::BatchOt))
}

fn sharded_assignment(
    src: &[Vec2],
    tgt: &[Vec2],
    shard: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let n = src.len();
    if n <= shard {
        let plan = solve_assignment(&cost_matrix(src, tgt))?;
        return Ok(plan.pairs);
    }
    let mut rng = Stream::new(seed);
    let src_order = rng.permutation(n);
    let tgt_order = rng.permutation(n);
    let mut pairs = Vec::with_capacity(n);
    for (s_idx, t_idx) in src_order.chunks(shard).zip(tgt_order.chunks(shard)) {
        let s: Vec<Vec2> = s_idx.iter().map(|&i| src[i]).collect();
        let t: Vec<Vec2> = t_idx.iter().map(|&i| tgt[i]).collect();
        let local = solve_assignment(&cost_matrix(&s, &t))?;
        pairs.extend(local.pairs.into_iter().map(|(a, b)| (s_idx[a], t_idx[b])));
    }
    Ok(pairs)
}

/// Exact assignment inside every cluster between its own source samples and
/// its member points. Clusters larger than `lap_cap` are sharded with a
/// seed derived from `(seed, k)`. Plan indices are local to each cluster.
pub fn couple_cluster_ot(
    sources: &[PointCloud],
    clusters: &[PointCloud],
    lap_cap: usize,
    seed: u64,
) -> Result<Vec<CouplingPlan>> {
    if sources.len() != clusters.len() {
        return Err(Error::Shape(format!(
            "{} source clouds for {} clusters",
            sources.len(),
            clusters.len()
        )));
    }
    if lap_cap == 0 {
        return Err(Error::parameter("lap_cap", "must be at least 1"));
    }
    for (k, (s, c)) in sources.iter().zip(clusters).enumerate() {
        if s.len() != c.len() {
            return Err(Error::Shape(format!(
                "cluster {k}: {} source points for {} members",
                s.len(),
                c.len()
            )));
        }
    }
    let solve_one = |k: usize| -> Result<CouplingPlan> {
        let (s, c) = (&sources[k].points, &clusters[k].points);
        let pairs = sharded_assignment(s, c, lap_cap, crate::rng::mix(seed, k as u64))?;
        Ok(CouplingPlan::from_pairs(pairs, s, c, Strategy::ClusterOt))
    };
    crate::par_map(0..sources.len(), solve_one).into_iter().collect()
}

/// Pair every source point with its own forward-ODE endpoint. Returns the
/// identity plan together with the generated cloud.
pub fn couple_reflow<F: VelocityField>(
    field: &F,
    src: &PointCloud,
    steps: usize,
) -> Result<(CouplingPlan, PointCloud)> {
    let endpoints = flow::push_forward(field, &src.points, steps)?;
    let pairs = (0..src.len()).map(|i| (i, i)).collect();
    let plan = CouplingPlan::from_pairs(pairs, &src.points, &endpoints, Strategy::Reflow);
    let generated = PointCloud::new(endpoints, src.seed, "reflow");
    Ok((plan, generated))
}
