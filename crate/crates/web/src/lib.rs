//! Browser bindings. Points cross the boundary as flat `[x0, y0, x1, y1, ...]`
//! arrays; every export has a plain-Rust twin so it can be tested natively.

use cotfm_core::clustering::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};
use cotfm_core::coupling::{
    couple_batch_ot, couple_cluster_ot, couple_random, solve_assignment, CostMatrix, DEFAULT_LAP_CAP,
};
use cotfm_core::datasets::{generate, DatasetKind, DatasetSpec, PointCloud};
use cotfm_core::{sq_dist, Vec2};
use wasm_bindgen::prelude::*;

/// Largest cloud the coupling view accepts; exact assignment is cubic.
pub const MAX_POINTS: usize = 1500;

pub fn unflatten(flat: &[f64]) -> Result<Vec<Vec2>, String> {
    if flat.len() % 2 != 0 {
        return Err(format!("odd coordinate count {}", flat.len()));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

pub fn flatten(points: &[Vec2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

/// `n` target points of a named dataset.
pub fn dataset_points(kind: &str, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let kind = DatasetKind::parse(kind).map_err(|e| e.to_string())?;
    let pc = generate(&DatasetSpec::default_for(kind, n), seed).map_err(|e| e.to_string())?;
    Ok(flatten(&pc.points))
}

/// `n` draws of `N(0, std^2 I)`.
pub fn source_points(n: usize, std: f64, seed: u64) -> Result<Vec<f64>, String> {
    let gs = cotfm_core::flow::GaussianSource::isotropic([0.0, 0.0], std).map_err(|e| e.to_string())?;
    Ok(flatten(&cotfm_core::flow::sample_source(&gs, n, seed).points))
}

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Clusters {
    centroids: Vec<f64>,
    labels: Vec<u32>,
    inertia: f64,
}

#[wasm_bindgen]
impl Clusters {
    #[wasm_bindgen(getter)]
    pub fn centroids(&self) -> Vec<f64> {
        self.centroids.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn inertia(&self) -> f64 {
        self.inertia
    }
}

pub fn cluster_points(flat: &[f64], k: usize, seed: u64) -> Result<Clusters, String> {
    let pc = PointCloud::new(unflatten(flat)?, seed, "browser");
    let model = kmeans(&pc, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(|e| e.to_string())?;
    Ok(Clusters {
        centroids: flatten(&model.centroids),
        labels: model.labels.iter().map(|&l| l as u32).collect(),
        inertia: model.inertia,
    })
}

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Coupling {
    target_of: Vec<u32>,
    cluster_of: Vec<u32>,
    cost: f64,
}

#[wasm_bindgen]
impl Coupling {
    /// Target index paired with each source index.
    #[wasm_bindgen(getter)]
    pub fn target_of(&self) -> Vec<u32> {
        self.target_of.clone()
    }

    /// Cluster of each source point; all zero outside cluster OT.
    #[wasm_bindgen(getter)]
    pub fn cluster_of(&self) -> Vec<u32> {
        self.cluster_of.clone()
    }

    /// Mean squared pairing distance.
    #[wasm_bindgen(getter)]
    pub fn cost(&self) -> f64 {
        self.cost
    }
}

/// Pair `src` with `tgt` by `strategy` (`random`, `batch_ot` or
/// `cluster_ot`).
///
/// Without a trained flow there are no fitted cluster sources, so cluster OT
/// here routes source draws to target clusters first (one exact assignment
/// against the centroids, with cluster sizes as capacities) and then solves
/// each cluster on its own.
pub fn couple(src: &[f64], tgt: &[f64], strategy: &str, batch: usize, k: usize, seed: u64) -> Result<Coupling, String> {
    let s = unflatten(src)?;
    let t = unflatten(tgt)?;
    if s.len() != t.len() {
        return Err(format!("{} sources for {} targets", s.len(), t.len()));
    }
    if s.is_empty() {
        return Err("empty point cloud".into());
    }
    if s.len() > MAX_POINTS {
        return Err(format!("at most {MAX_POINTS} points"));
    }
    let n = s.len();
    let err = |e: cotfm_core::Error| e.to_string();
    let (target_of, cluster_of) = match strategy {
        "random" => (couple_random(&s, &t, seed).map_err(err)?.target_for_source(), vec![0; n]),
        "batch_ot" => (
            couple_batch_ot(&s, &t, batch.max(1), seed).map_err(err)?.target_for_source(),
            vec![0; n],
        ),
        "cluster_ot" => {
            let tc = PointCloud::new(t.clone(), seed, "target");
            let model = kmeans(&tc, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(err)?;
            // slot j stands for target j's centroid
            let mut entries = Vec::with_capacity(n * n);
            for &x in &s {
                for &l in &model.labels {
                    entries.push(sq_dist(x, model.centroids[l]));
                }
            }
            let routing = solve_assignment(&CostMatrix { entries, n, m: n }).map_err(err)?;
            let mut cluster_of = vec![0u32; n];
            let mut src_members: Vec<Vec<usize>> = vec![Vec::new(); model.k];
            for &(i, j) in &routing.pairs {
                let l = model.labels[j];
                cluster_of[i] = l as u32;
                src_members[l].push(i);
            }
            let srcs: Vec<PointCloud> = src_members.iter().map(|m| PointCloud::new(m.iter().map(|&i| s[i]).collect(), seed, "src")).collect();
            let members = model.split(&tc);
            let plans = couple_cluster_ot(&srcs, &members, DEFAULT_LAP_CAP, seed).map_err(err)?;
            let mut target_of = vec![0usize; n];
            for (c, plan) in plans.iter().enumerate() {
                for &(a, b) in &plan.pairs {
                    target_of[src_members[c][a]] = model.members[c][b];
                }
            }
            (target_of, cluster_of)
        }
        other => return Err(format!("unknown strategy `{other}`")),
    };
    let cost = target_of.iter().enumerate().map(|(i, &j)| sq_dist(s[i], t[j])).sum::<f64>() / n as f64;
    Ok(Coupling {
        target_of: target_of.into_iter().map(|j| j as u32).collect(),
        cluster_of,
        cost,
    })
}

// seeds are u32 on the JS side so callers pass plain numbers, not BigInt

#[wasm_bindgen(js_name = sampleDataset)]
pub fn sample_dataset_js(kind: &str, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    dataset_points(kind, n, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleSource)]
pub fn sample_source_js(n: usize, std: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    source_points(n, std, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kmeans)]
pub fn kmeans_js(points: &[f64], k: usize, seed: u32) -> Result<Clusters, JsError> {
    cluster_points(points, k, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = couple)]
pub fn couple_js(src: &[f64], tgt: &[f64], strategy: &str, batch: usize, k: usize, seed: u32) -> Result<Coupling, JsError> {
    couple(src, tgt, strategy, batch, k, seed.into()).map_err(|e| JsError::new(&e))
}
