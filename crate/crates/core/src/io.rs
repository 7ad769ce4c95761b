//! On-disk formats: point and plan CSVs with JSON sidecars, cluster models,
//! Gaussian source lists, trajectory dumps and network checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::coupling::{CouplingPlan, Strategy};
use crate::datasets::{DatasetSpec, PointCloud};
use crate::error::{Error, Result};
use crate::flow::{GaussianSource, Trajectory};
use crate::net::{Activation, AdamConfig, VectorFieldNet};
use crate::Vec2;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::file(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::file(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

fn parse_rows<'a>(path: &Path, text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(Error::file(
                path,
                format!("expected header `{header}`, found `{}`", other.unwrap_or("")),
            ))
        }
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').map(str::trim).collect();
            if cols.len() != width {
                return Err(Error::file(path, format!("row {}: expected {width} columns", i + 1)));
            }
            Ok(cols)
        })
        .collect()
}

fn num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::file(path, format!("cannot parse `{s}`")))
}

pub fn points_csv(points: &[Vec2]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        writeln!(out, "{},{}", fmt_f64(p[0]), fmt_f64(p[1])).unwrap();
    }
    out
}

pub fn write_points_csv(path: &Path, points: &[Vec2]) -> Result<()> {
    write_text(path, &points_csv(points))
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Vec2>> {
    let text = read_text(path)?;
    parse_rows(path, &text, "x,y")?
        .into_iter()
        .map(|r| Ok([num(path, r[0])?, num(path, r[1])?]))
        .collect()
}

/// JSON sidecar written next to a point-cloud CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloudMeta {
    pub label: String,
    pub seed: u64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DatasetSpec>,
    pub rng: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_point_cloud(path: &Path, pc: &PointCloud, spec: Option<&DatasetSpec>) -> Result<()> {
    write_points_csv(path, &pc.points)?;
    let meta = PointCloudMeta {
        label: pc.label.clone(),
        seed: pc.seed,
        n: pc.len(),
        spec: spec.cloned(),
        rng: crate::rng::ALGORITHM.to_string(),
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads the CSV, and the sidecar when present.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let points = read_points_csv(path)?;
    let side = sidecar_path(path);
    let (seed, label) = if side.exists() {
        let meta: PointCloudMeta = read_json(&side)?;
        (meta.seed, meta.label)
    } else {
        (0, path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
    };
    Ok(PointCloud::new(points, seed, label))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanMeta {
    pub strategy: Strategy,
    pub cost: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

pub fn write_plan(path: &Path, plan: &CouplingPlan, meta: &PlanMeta) -> Result<()> {
    let mut out = String::from("src_idx,tgt_idx\n");
    for (s, t) in &plan.pairs {
        writeln!(out, "{s},{t}").unwrap();
    }
    write_text(path, &out)?;
    write_json(&sidecar_path(path), meta)
}

pub fn read_plan(path: &Path) -> Result<CouplingPlan> {
    let text = read_text(path)?;
    let pairs = parse_rows(path, &text, "src_idx,tgt_idx")?
        .into_iter()
        .map(|r| Ok((num(path, r[0])?, num(path, r[1])?)))
        .collect::<Result<Vec<_>>>()?;
    let meta: PlanMeta = read_json(&sidecar_path(path))?;
    Ok(CouplingPlan {
        pairs,
        cost: meta.cost,
        strategy: meta.strategy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModelMeta {
    pub k: usize,
    pub centroids: Vec<Vec2>,
    pub seed: u64,
    pub inertia: f64,
    pub sizes: Vec<usize>,
}

/// `<stem>.json` plus `<stem>_labels.csv`.
pub fn write_cluster_model(json_path: &Path, model: &ClusterModel) -> Result<()> {
    let meta = ClusterModelMeta {
        k: model.k,
        centroids: model.centroids.clone(),
        seed: model.seed,
        inertia: model.inertia,
        sizes: model.sizes(),
    };
    write_json(json_path, &meta)?;
    let mut out = String::from("point_idx,cluster\n");
    for (i, l) in model.labels.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    write_text(&labels_path(json_path), &out)
}

pub fn labels_path(json_path: &Path) -> PathBuf {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    json_path.with_file_name(format!("{stem}_labels.csv"))
}

pub fn read_cluster_model(json_path: &Path) -> Result<ClusterModel> {
    let meta: ClusterModelMeta = read_json(json_path)?;
    let lp = labels_path(json_path);
    let text = read_text(&lp)?;
    let mut labels = Vec::new();
    for r in parse_rows(&lp, &text, "point_idx,cluster")? {
        let i: usize = num(&lp, r[0])?;
        let k: usize = num(&lp, r[1])?;
        if i != labels.len() || k >= meta.k {
            return Err(Error::file(&lp, format!("bad label row {i},{k}")));
        }
        labels.push(k);
    }
    let mut members = vec![Vec::new(); meta.k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    Ok(ClusterModel {
        k: meta.k,
        centroids: meta.centroids,
        labels,
        members,
        inertia: meta.inertia,
        seed: meta.seed,
        iterations: 0,
        inertia_history: Vec::new(),
    })
}

pub fn write_sources(path: &Path, sources: &[GaussianSource]) -> Result<()> {
    write_json(path, &sources)
}

pub fn read_sources(path: &Path) -> Result<Vec<GaussianSource>> {
    let raw: Vec<GaussianSource> = read_json(path)?;
    raw.into_iter().map(GaussianSource::refresh).collect()
}

pub fn trajectories_csv(trajs: &[Trajectory]) -> String {
    let mut out = String::from("sample_idx,step,t,x,y\n");
    for (i, tr) in trajs.iter().enumerate() {
        for (s, (p, t)) in tr.states.iter().zip(&tr.t_grid).enumerate() {
            writeln!(out, "{i},{s},{},{},{}", fmt_f64(*t), fmt_f64(p[0]), fmt_f64(p[1])).unwrap();
        }
    }
    out
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    write_text(path, &trajectories_csv(trajs))
}

/// Polylines keyed by sample index, in step order.
pub fn read_trajectories(path: &Path) -> Result<Vec<Vec<Vec2>>> {
    let text = read_text(path)?;
    let mut out: Vec<Vec<Vec2>> = Vec::new();
    for r in parse_rows(path, &text, "sample_idx,step,t,x,y")? {
        let i: usize = num(path, r[0])?;
        if i >= out.len() {
            out.resize(i + 1, Vec::new());
        }
        out[i].push([num(path, r[3])?, num(path, r[4])?]);
    }
    Ok(out)
}

/// JSON manifest written next to the raw parameter blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub step: u64,
    pub optimizer: AdamConfig,
    pub param_count: usize,
    /// File name of the blob, relative to the manifest.
    pub params: String,
    pub params_sha256: String,
}

/// Parameters as little-endian f64, layer by layer, weights row-major then
/// biases.
pub fn params_blob(net: &VectorFieldNet) -> Vec<u8> {
    net.flat_params()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

pub fn save_checkpoint(manifest_path: &Path, net: &VectorFieldNet, step: u64, optimizer: AdamConfig) -> Result<()> {
    let blob_name = format!(
        "{}.bin",
        manifest_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "params".into())
    );
    let blob_path = manifest_path.with_file_name(&blob_name);
    let blob = params_blob(net);
    if let Some(dir) = blob_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(&blob_path, &blob).map_err(|e| Error::file(&blob_path, e))?;
    let manifest = CheckpointManifest {
        layer_sizes: net.layer_sizes().to_vec(),
        activation: net.activation(),
        step,
        optimizer,
        param_count: net.param_count(),
        params: blob_name,
        params_sha256: hex_digest(&blob),
    };
    write_json(manifest_path, &manifest)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(VectorFieldNet, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(manifest_path)?;
    let blob_path = manifest_path.with_file_name(&manifest.params);
    let bytes = fs::read(&blob_path).map_err(|e| Error::file(&blob_path, e))?;
    if bytes.len() != manifest.param_count * 8 {
        return Err(Error::file(
            &blob_path,
            format!("{} bytes for {} parameters", bytes.len(), manifest.param_count),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = VectorFieldNet::zeros(&manifest.layer_sizes, manifest.activation)?;
    net.set_flat_params(&flat)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, DatasetKind};

    #[test]
    fn points_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::default_for(DatasetKind::TwoMoons, 200);
        let pc = generate(&spec, 4).unwrap();
        let path = dir.path().join("moons.csv");
        write_point_cloud(&path, &pc, Some(&spec)).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back, pc);
        let meta: PointCloudMeta = read_json(&sidecar_path(&path)).unwrap();
        assert_eq!(meta.spec, Some(spec));
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt_f64(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn bad_header_is_file_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_text(&path, "a,b\n1,2\n").unwrap();
        let err = read_points_csv(&path).unwrap_err();
        assert!(matches!(err, Error::File { .. }));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = VectorFieldNet::glorot(&[3, 8, 8, 2], Activation::Silu, 2).unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &net, 12, AdamConfig::default()).unwrap();
        let (back, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(manifest.step, 12);
        let blob = fs::read(dir.path().join("ckpt.bin")).unwrap();
        assert_eq!(blob.len(), net.param_count() * 8);
        // first entry is W0[0][0]
        let first = f64::from_le_bytes(blob[..8].try_into().unwrap());
        assert_eq!(first, net.layers()[0].weight[[0, 0]]);
    }

    #[test]
    fn trajectories_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let tr = Trajectory {
            states: vec![[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]],
            t_grid: vec![0.0, 0.5, 1.0],
            direction: crate::flow::Direction::Forward,
        };
        let path = dir.path().join("t.csv");
        write_trajectories(&path, &[tr.clone(), tr.clone()]).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back, vec![tr.states.clone(), tr.states]);
    }
}
