//! Lloyd's k-means with k-means++ seeding.

use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::{sq_dist, Vec2};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec2>,
    pub labels: Vec<usize>,
    /// Sorted member indices of each cluster.
    pub members: Vec<Vec<usize>>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// One point cloud per cluster, members in ascending index order.
    pub fn split(&self, pc: &PointCloud) -> Vec<PointCloud> {
        self.members.iter().map(|m| pc.select(m)).collect()
    }
}

fn nearest(p: Vec2, centroids: &[Vec2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, &c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec2], k: usize, rng: &mut Stream) -> Vec<Vec2> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.below(n)]);
    let mut d2: Vec<f64> = points.iter().map(|&p| sq_dist(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            rng.categorical(&d2)
        } else {
            // every point already coincides with a centroid
            rng.below(n)
        };
        let c = points[next];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// Returns the total inertia of the new assignment.
fn assign(points: &[Vec2], centroids: &[Vec2], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (l, &p) in labels.iter_mut().zip(points) {
        let (k, d) = nearest(p, centroids);
        *l = k;
        inertia += d;
    }
    inertia
}

/// Move the point farthest from its centroid in the largest cluster into
/// every empty cluster. Returns true if anything changed.
fn repair_empty(points: &[Vec2], centroids: &mut [Vec2], labels: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return changed;
        };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        if counts[largest] < 2 {
            return changed;
        }
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                let da = sq_dist(points[a], centroids[largest]);
                let db = sq_dist(points[b], centroids[largest]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        labels[far] = empty;
        centroids[empty] = points[far];
        changed = true;
    }
}

fn update(points: &[Vec2], labels: &[usize], centroids: &mut [Vec2]) -> f64 {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (&l, p) in labels.iter().zip(points) {
        sums[l][0] += p[0];
        sums[l][1] += p[1];
        counts[l] += 1;
    }
    let mut shift: f64 = 0.0;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let c = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
        shift = shift.max(sq_dist(c, centroids[j]).sqrt());
        centroids[j] = c;
    }
    shift
}

pub fn kmeans(pc: &PointCloud, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    let points = &pc.points;
    if points.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::parameter(
            "k",
            format!("need 1 <= k <= n = {}, got {k}", points.len()),
        ));
    }
    if max_iter == 0 {
        return Err(Error::parameter("max_iter", "must be at least 1"));
    }
    if !(tol >= 0.0) {
        return Err(Error::parameter("tol", "must be non-negative"));
    }

    let mut rng = Stream::new(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let inertia = assign(points, &centroids, &mut labels);
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * f64::max(prev, 1.0),
                "inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);
        let shift = update(points, &labels, &mut centroids);
        let repaired = repair_empty(points, &mut centroids, &mut labels);
        if repaired {
            update(points, &labels, &mut centroids);
        }
        if shift < tol && !repaired {
            break;
        }
    }

    // final assignment so labels are the nearest-centroid labels
    let mut inertia = assign(points, &centroids, &mut labels);
    if repair_empty(points, &mut centroids, &mut labels) {
        inertia = labels
            .iter()
            .zip(points)
            .map(|(&l, &p)| sq_dist(p, centroids[l]))
            .sum();
    }

    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    Ok(ClusterModel {
        k,
        centroids,
        labels,
        members,
        inertia,
        seed,
        iterations,
        inertia_history: history,
    })
}

/// Fraction of points in each cluster.
pub fn cluster_weights(model: &ClusterModel) -> Vec<f64> {
    weights_from_sizes(&model.sizes())
}

pub fn weights_from_sizes(sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / n as f64).collect()
}
