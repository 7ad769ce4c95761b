//! The benchmark matrix: methods x datasets x seeds, one results row per
//! cell, with per-cell artifacts for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetKind, DatasetSpec};
use crate::error::Result;
use crate::io;

use super::{pretrain_shared, run_experiment, ExperimentConfig, ExperimentOutcome, Method, Pretrained, Sampler, Seeds};

/// Configs for every method on every default dataset, `seeds` seeds each,
/// derived from `base` (whose method and dataset kind are replaced).
pub fn benchmark_matrix(base: &ExperimentConfig, datasets: &[DatasetKind], seeds: u64) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &kind in datasets {
        for s in 0..seeds {
            for method in Method::TABLE1 {
                let mut cfg = base.clone();
                cfg.method = method;
                if cfg.dataset.kind() != kind {
                    cfg.dataset = DatasetSpec::default_for(kind, base.dataset.n);
                }
                cfg.seeds = base.seeds.offset(s);
                out.push(cfg);
            }
        }
    }
    out
}

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub nfe: usize,
    pub w2: f64,
    pub curvature: f64,
    pub seed: u64,
    pub wall_ms_total: f64,
    pub status: String,
}

impl ResultRow {
    /// The row without its wall-clock column.
    pub fn metrics_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.dataset,
            self.method,
            self.nfe,
            io::fmt_f64(self.w2),
            io::fmt_f64(self.curvature),
            self.seed,
            self.status
        )
    }
}

pub const RESULTS_HEADER: &str = "dataset,method,nfe,w2,curvature,seed,wall_ms_total,status";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.3},{}",
            r.dataset,
            r.method,
            r.nfe,
            io::fmt_f64(r.w2),
            io::fmt_f64(r.curvature),
            r.seed,
            r.wall_ms_total,
            r.status
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub w2: f64,
    pub curvature: f64,
}

pub fn rounds_csv(rows: &[RoundRow]) -> String {
    let mut out = String::from("dataset,method,seed,round,w2,curvature\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dataset,
            r.method,
            r.seed,
            r.round,
            io::fmt_f64(r.w2),
            io::fmt_f64(r.curvature)
        )
        .unwrap();
    }
    out
}

/// A finished (or failed) cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub outcome: std::result::Result<ExperimentOutcome, String>,
}

impl CellResult {
    pub fn row(&self) -> ResultRow {
        let cfg = &self.config;
        match &self.outcome {
            Ok(o) => ResultRow {
                dataset: cfg.dataset.kind().name().into(),
                method: cfg.method.name().into(),
                nfe: o.evaluation.report.nfe,
                w2: o.evaluation.report.wasserstein2,
                curvature: o.evaluation.report.curvature,
                seed: cfg.seeds.data,
                wall_ms_total: o.audit.wall_ms.values().sum(),
                status: "ok".into(),
            },
            Err(e) => ResultRow {
                dataset: cfg.dataset.kind().name().into(),
                method: cfg.method.name().into(),
                nfe: cfg.t_sample,
                w2: f64::NAN,
                curvature: f64::NAN,
                seed: cfg.seeds.data,
                wall_ms_total: 0.0,
                status: format!("error: {}", e.replace([',', '\n'], ";")),
            },
        }
    }

    pub fn round_rows(&self) -> Vec<RoundRow> {
        let Ok(o) = &self.outcome else {
            return Vec::new();
        };
        o.rounds
            .iter()
            .map(|r| RoundRow {
                dataset: self.config.dataset.kind().name().into(),
                method: self.config.method.name().into(),
                seed: self.config.seeds.data,
                round: r.round,
                w2: r.report.wasserstein2,
                curvature: r.report.curvature,
            })
            .collect()
    }
}

/// Run every config. Cells sharing a rectified-flow bootstrap train it
/// once; groups run on up to `jobs` threads. Failures are kept per cell and
/// never abort the matrix. Results come back in input order.
pub fn run_cells(configs: &[ExperimentConfig], jobs: usize) -> Vec<CellResult> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, cfg) in configs.iter().enumerate() {
        groups.entry(cfg.pretrain_key()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    let run_group = |idx: &Vec<usize>| -> Vec<(usize, CellResult)> {
        let needs_pretrain = idx.iter().any(|&i| configs[i].method.uses_pretrained());
        let shared: Option<std::result::Result<Pretrained, String>> =
            needs_pretrain.then(|| pretrain_shared(&configs[idx[0]]).map_err(|e| e.to_string()));
        idx.iter()
            .map(|&i| {
                let cfg = &configs[i];
                let outcome = match (&shared, cfg.method.uses_pretrained()) {
                    (Some(Err(e)), true) => Err(format!("pretrain: {e}")),
                    (Some(Ok(p)), true) => run_experiment(cfg, Some(p)).map_err(|e| e.to_string()),
                    _ => run_experiment(cfg, None).map_err(|e| e.to_string()),
                };
                (
                    i,
                    CellResult {
                        config: cfg.clone(),
                        outcome,
                    },
                )
            })
            .collect()
    };

    let mut results: Vec<(usize, CellResult)> = run_groups(&groups, jobs, run_group);
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, c)| c).collect()
}

#[cfg(feature = "parallel")]
fn run_groups<F>(groups: &[Vec<usize>], jobs: usize, f: F) -> Vec<(usize, CellResult)>
where
    F: Fn(&Vec<usize>) -> Vec<(usize, CellResult)> + Sync + Send,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return groups.iter().flat_map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| groups.par_iter().flat_map_iter(&f).collect()),
        Err(_) => groups.iter().flat_map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_groups<F>(groups: &[Vec<usize>], _jobs: usize, f: F) -> Vec<(usize, CellResult)>
where
    F: Fn(&Vec<usize>) -> Vec<(usize, CellResult)>,
{
    groups.iter().flat_map(f).collect()
}

/// Files written for one cell, plus a manifest of their hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub seeds: Seeds,
    pub checkpoint: PathBuf,
    pub eval_report: PathBuf,
    pub samples: PathBuf,
    pub target: PathBuf,
    pub trajectories: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<PathBuf>,
    /// SHA-256 of every file above, keyed by file name.
    pub hashes: BTreeMap<String, String>,
    /// SHA-256 over the sorted `name:hash` lines.
    pub content_hash: String,
}

impl RunArtifact {
    pub fn recompute_content_hash(dir: &Path, hashes: &BTreeMap<String, String>) -> Result<String> {
        let mut lines = String::new();
        for name in hashes.keys() {
            let h = io::file_sha256(&dir.join(name))?;
            writeln!(lines, "{name}:{h}").unwrap();
        }
        Ok(io::hex_digest(lines.as_bytes()))
    }
}

/// Write the checkpoint, metrics, samples, dumps and (for cluster runs) the
/// cluster model and sources of a finished cell into `dir`.
pub fn write_cell_artifacts(dir: &Path, o: &ExperimentOutcome) -> Result<RunArtifact> {
    let cfg = &o.config;
    io::write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let checkpoint = dir.join("checkpoint.json");
    let steps = o.losses.iter().map(|l| l.steps).sum();
    io::save_checkpoint(&checkpoint, &o.net, steps, cfg.adam())?;
    let eval_report = dir.join("eval.json");
    io::write_json(&eval_report, &o.evaluation.report)?;
    let samples = dir.join("samples.csv");
    io::write_points_csv(&samples, &o.evaluation.generated)?;
    let target = dir.join("target.csv");
    io::write_points_csv(&target, &o.eval_target.points)?;
    let source_samples = dir.join("source_samples.csv");
    io::write_points_csv(&source_samples, &o.evaluation.starts)?;
    let trajectories = dir.join("trajectories.csv");
    io::write_trajectories(&trajectories, &o.evaluation.trajectories)?;

    let mut files = vec![
        "config.toml",
        "checkpoint.json",
        "checkpoint.bin",
        "eval.json",
        "samples.csv",
        "target.csv",
        "source_samples.csv",
        "trajectories.csv",
    ];
    if let Some(best) = &o.best_net {
        io::save_checkpoint(&dir.join("best_checkpoint.json"), best, steps, cfg.adam())?;
        files.push("best_checkpoint.json");
        files.push("best_checkpoint.bin");
    }
    let mut cluster_model = None;
    if let Some(model) = &o.clusters {
        let p = dir.join("clusters.json");
        io::write_cluster_model(&p, model)?;
        files.push("clusters.json");
        files.push("clusters_labels.csv");
        cluster_model = Some(p);
    }
    let mut sources = None;
    if let Sampler::Mixture { sources: s, weights } = &o.sampler {
        let p = dir.join("sources.json");
        io::write_sources(&p, s)?;
        io::write_json(&dir.join("weights.json"), weights)?;
        files.push("sources.json");
        files.push("weights.json");
        sources = Some(p);
        for r in &o.rounds {
            if !r.sources.is_empty() {
                let name = format!("sources_round{}.json", r.round);
                io::write_sources(&dir.join(&name), &r.sources)?;
            }
        }
    }
    let mut rounds = None;
    if !o.rounds.is_empty() {
        let p = dir.join("rounds.csv");
        let cell = CellResult {
            config: cfg.clone(),
            outcome: Ok(o.clone()),
        };
        io::write_text(&p, &rounds_csv(&cell.round_rows()))?;
        files.push("rounds.csv");
        rounds = Some(p);
    }

    let mut hashes = BTreeMap::new();
    for f in files {
        hashes.insert(f.to_string(), io::file_sha256(&dir.join(f))?);
    }
    let content_hash = RunArtifact::recompute_content_hash(dir, &hashes)?;
    let artifact = RunArtifact {
        config_hash: cfg.hash(),
        seeds: cfg.seeds,
        checkpoint,
        eval_report,
        samples,
        target,
        trajectories,
        cluster_model,
        sources,
        rounds,
        hashes,
        content_hash,
    };
    io::write_json(&dir.join("artifacts.json"), &artifact)?;
    Ok(artifact)
}
