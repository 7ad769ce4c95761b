use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cotfm_core::clustering::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};
use cotfm_core::coupling::couple_batch_ot;
use cotfm_core::datasets::{empirical_moments, generate, DatasetKind, DatasetSpec};
use cotfm_core::error::{Error, Result};
use cotfm_core::flow::{self, draw_mixture, fit_cluster_sources_with_points, sample_source, GaussianSource, Trajectory};
use cotfm_core::io;
use cotfm_core::metrics::{path_curvature, solve_chunks, time_ot_epoch, wasserstein2};
use cotfm_core::pipeline::{
    self, benchmark_matrix, results_csv, rounds_csv, run_cells, run_experiment, write_cell_artifacts, Audit,
    ExperimentConfig, Method, Pretrained, TrainLog,
};
use cotfm_core::plot::{self, Figure};
use cotfm_core::Vec2;
use serde_json::{json, Value};

use crate::manifest::Run;
use crate::{Command, ConfigArgs};

pub fn dispatch(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Gen { dataset, n, seed, out } => gen(&dataset, n, seed, &out.out),
        Command::Train { cfg, method, out } => train(&cfg, method.as_deref(), &out.out),
        Command::Alternate { cfg, checkpoint, out } => alternate(&cfg, checkpoint.as_deref(), &out.out),
        Command::Sample {
            checkpoint,
            n,
            steps,
            seed,
            sources,
            weights,
            source_std,
            dump,
            out,
        } => sample(
            &checkpoint,
            SampleArgs {
                n,
                steps,
                seed,
                sources,
                weights,
                source_std,
                dump,
            },
            &out.out,
        ),
        Command::Reverse {
            checkpoint,
            points,
            steps,
            clusters,
            dump,
            out,
        } => reverse(&checkpoint, &points, steps, clusters.as_deref(), dump, &out.out),
        Command::Eval {
            samples,
            target,
            trajectories,
            out,
        } => eval(&samples, &target, trajectories.as_deref(), &out.out),
        Command::BenchOt {
            n,
            cluster_size,
            batch_size,
            seed,
            out,
        } => bench_ot(n, cluster_size, batch_size, seed, &out.out),
        Command::Table1 { cfg, seeds, jobs, out } => table1(&cfg, seeds, jobs, &out.out),
        Command::Plot { run, output, title } => plot_run(&run, output.as_deref(), &title),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// TOML file (or the 2D protocol) with `--set` overrides applied on top.
fn load_config(args: &ConfigArgs, extra: &[String]) -> Result<(ExperimentConfig, Vec<String>)> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::from_toml(&io::read_text(p)?).map_err(|e| match e {
            Error::Parse(m) => Error::file(p, m),
            other => other,
        })?,
        None => ExperimentConfig::protocol_2d(DatasetKind::FiveGaussians, Method::CotFm),
    };
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    let cfg = base.with_overrides(&overrides).map_err(|e| e.in_stage("config"))?;
    Ok((cfg, overrides))
}

fn config_args_json(args: &ConfigArgs) -> Value {
    json!({ "config": args.config.as_deref().map(path_str), "set": args.overrides })
}

fn gen(dataset: &str, n: usize, seed: u64, out: &Path) -> Result<Value> {
    let kind = DatasetKind::parse(dataset)?;
    let spec = DatasetSpec::default_for(kind, n);
    let pc = generate(&spec, seed)?;
    let run = Run::create(out, "gen", json!({ "dataset": kind.name(), "n": n, "seed": seed }), None)?;
    io::write_point_cloud(&run.path("points.csv"), &pc, Some(&spec))?;
    run.finish(json!({ "n": pc.len() }))
}

fn losses_csv(phases: &[(&str, &TrainLog)]) -> String {
    let mut out = String::from("phase,epoch,loss\n");
    for (name, log) in phases {
        for (e, l) in log.epoch_loss.iter().enumerate() {
            writeln!(out, "{name},{e},{}", io::fmt_f64(*l)).unwrap();
        }
    }
    out
}

fn train(args: &ConfigArgs, method: Option<&str>, out: &Path) -> Result<Value> {
    let extra: Vec<String> = method
        .map(|m| Method::parse(m).map(|m| format!("method={}", m.name())))
        .transpose()?
        .into_iter()
        .collect();
    let (cfg, overrides) = load_config(args, &extra)?;
    let mut audit = Audit::default();
    let (train_data, _) = pipeline::prepare_data(&cfg).map_err(|e| e.in_stage("data"))?;
    let (net, phases) = match cfg.method {
        Method::RectifiedFlow | Method::CotFm => {
            let (net, log) = pipeline::pretrain(&cfg, &train_data, &mut audit)?;
            (net, vec![("pretrain", log)])
        }
        Method::OtCfm => {
            let (net, log) = pipeline::train_ot_cfm(&cfg, &train_data, &mut audit)?;
            (net, vec![("ot_cfm", log)])
        }
        Method::Reflow => {
            let (pre, log) = pipeline::pretrain(&cfg, &train_data, &mut audit)?;
            let (net, log2) = pipeline::reflow_finetune(pre, &cfg, &mut audit)?;
            (net, vec![("pretrain", log), ("reflow", log2)])
        }
    };
    let run = Run::create(
        out,
        "train",
        json!({ "cfg": config_args_json(args), "method": method }),
        Some((&cfg, &overrides)),
    )?;
    let steps = phases.iter().map(|(_, l)| l.steps).sum();
    io::save_checkpoint(&run.path("checkpoint.json"), &net, steps, cfg.adam())?;
    let refs: Vec<(&str, &TrainLog)> = phases.iter().map(|(n, l)| (*n, l)).collect();
    io::write_text(&run.path("losses.csv"), &losses_csv(&refs))?;
    io::write_text(&run.path("config.toml"), &cfg.to_toml())?;
    let final_loss = phases.last().and_then(|(_, l)| l.epoch_loss.last().copied());
    run.finish(json!({
        "method": cfg.method.name(),
        "steps": steps,
        "final_loss": final_loss,
        "wall_ms": audit.wall_ms,
    }))
}

fn alternate(args: &ConfigArgs, checkpoint: Option<&Path>, out: &Path) -> Result<Value> {
    let (cfg, overrides) = load_config(args, &["method=cot_fm".to_string()])?;
    let pretrained = match checkpoint {
        Some(p) => {
            let (net, _) = io::load_checkpoint(p)?;
            if net.layer_sizes() != cfg.net.layer_sizes.as_slice() {
                return Err(Error::parameter(
                    "net.layer_sizes",
                    format!("checkpoint has {:?}, config {:?}", net.layer_sizes(), cfg.net.layer_sizes),
                ));
            }
            Some(Pretrained {
                net,
                log: TrainLog::default(),
                wall_ms: 0.0,
            })
        }
        None => None,
    };
    let outcome = run_experiment(&cfg, pretrained.as_ref())?;
    let mut run = Run::create(
        out,
        "alternate",
        json!({ "cfg": config_args_json(args), "checkpoint": checkpoint.map(path_str) }),
        Some((&cfg, &overrides)),
    )?;
    if let Some(p) = checkpoint {
        run.input(p)?;
    }
    write_cell_artifacts(&run.dir, &outcome)?;
    let rounds: Vec<Value> = outcome
        .rounds
        .iter()
        .map(|r| json!({ "round": r.round, "w2": r.report.wasserstein2, "curvature": r.report.curvature }))
        .collect();
    run.finish(json!({
        "w2": outcome.evaluation.report.wasserstein2,
        "curvature": outcome.evaluation.report.curvature,
        "best_round": outcome.best_round,
        "rounds": rounds,
    }))
}

struct SampleArgs {
    n: usize,
    steps: usize,
    seed: u64,
    sources: Option<PathBuf>,
    weights: Option<PathBuf>,
    source_std: f64,
    dump: usize,
}

fn sample(checkpoint: &Path, a: SampleArgs, out: &Path) -> Result<Value> {
    let (net, _) = io::load_checkpoint(checkpoint)?;
    let (starts, components) = match &a.sources {
        Some(sp) => {
            let sources = io::read_sources(sp)?;
            let weights: Vec<f64> = match &a.weights {
                Some(wp) => io::read_json(wp)?,
                None => vec![1.0 / sources.len() as f64; sources.len()],
            };
            let (s, c) = draw_mixture(&sources, &weights, a.n, a.seed)?;
            (s, Some(c))
        }
        None => {
            if a.weights.is_some() {
                return Err(Error::parameter("weights", "needs --sources"));
            }
            let gs = GaussianSource::isotropic([0.0, 0.0], a.source_std)?;
            (sample_source(&gs, a.n, a.seed).points, None)
        }
    };
    let trajs = flow::forward_trajectories(&net, &starts, a.steps).map_err(|e| e.in_stage("sample"))?;
    let generated: Vec<Vec2> = trajs.iter().map(Trajectory::endpoint).collect();

    let args = json!({
        "checkpoint": path_str(checkpoint),
        "n": a.n,
        "steps": a.steps,
        "seed": a.seed,
        "sources": a.sources.as_deref().map(path_str),
        "weights": a.weights.as_deref().map(path_str),
        "source_std": a.source_std,
        "dump": a.dump,
    });
    let mut run = Run::create(out, "sample", args, None)?;
    run.input(checkpoint)?;
    for p in a.sources.iter().chain(&a.weights) {
        run.input(p)?;
    }
    io::write_points_csv(&run.path("samples.csv"), &generated)?;
    io::write_points_csv(&run.path("source_samples.csv"), &starts)?;
    io::write_trajectories(&run.path("trajectories.csv"), &trajs[..a.dump.min(trajs.len())])?;
    if let Some(c) = components {
        let mut text = String::from("sample_idx,component\n");
        for (i, k) in c.iter().enumerate() {
            writeln!(text, "{i},{k}").unwrap();
        }
        io::write_text(&run.path("components.csv"), &text)?;
    }
    if let Some(sp) = &a.sources {
        // keep the plot verb self-contained
        io::write_sources(&run.path("sources.json"), &io::read_sources(sp)?)?;
    }
    run.finish(json!({ "n": generated.len() }))
}

fn reverse(
    checkpoint: &Path,
    points: &Path,
    steps: usize,
    clusters: Option<&Path>,
    dump: usize,
    out: &Path,
) -> Result<Value> {
    let (net, _) = io::load_checkpoint(checkpoint)?;
    let pc = io::read_point_cloud(points)?;
    if pc.is_empty() {
        return Err(Error::EmptyInput("point cloud"));
    }
    let (sources, recovered) = match clusters {
        Some(cp) => {
            let model = io::read_cluster_model(cp)?;
            if model.labels.len() != pc.len() {
                return Err(Error::Shape(format!(
                    "{} cluster labels for {} points",
                    model.labels.len(),
                    pc.len()
                )));
            }
            let members = model.split(&pc);
            let (sources, per_cluster) =
                fit_cluster_sources_with_points(&net, &members, steps).map_err(|e| e.in_stage("reverse_ode"))?;
            // back to input order
            let mut recovered = vec![[0.0, 0.0]; pc.len()];
            for (idx, pts) in model.members.iter().zip(&per_cluster) {
                for (&i, &p) in idx.iter().zip(pts) {
                    recovered[i] = p;
                }
            }
            (sources, recovered)
        }
        None => {
            let recovered = flow::pull_back(&net, &pc.points, steps).map_err(|e| e.in_stage("reverse_ode"))?;
            let (mu, sigma) = empirical_moments(&recovered)?;
            (vec![GaussianSource::new(mu, sigma, recovered.len())?], recovered)
        }
    };
    let trajs = flow::reverse_trajectories(&net, &pc.points[..dump.min(pc.len())], steps)?;

    let args = json!({
        "checkpoint": path_str(checkpoint),
        "points": path_str(points),
        "steps": steps,
        "clusters": clusters.map(path_str),
        "dump": dump,
    });
    let mut run = Run::create(out, "reverse", args, None)?;
    run.input(checkpoint)?;
    run.input(points)?;
    if let Some(cp) = clusters {
        run.input(cp)?;
    }
    io::write_points_csv(&run.path("recovered.csv"), &recovered)?;
    io::write_trajectories(&run.path("trajectories.csv"), &trajs)?;
    io::write_sources(&run.path("sources.json"), &sources)?;
    let means: Vec<Vec2> = sources.iter().map(|s| s.mu).collect();
    run.finish(json!({ "k": sources.len(), "means": means }))
}

fn eval(samples: &Path, target: &Path, trajectories: Option<&Path>, out: &Path) -> Result<Value> {
    let a = io::read_points_csv(samples)?;
    let b = io::read_points_csv(target)?;
    let w2 = wasserstein2(&a, &b).map_err(|e| e.in_stage("w2"))?;
    let curvature = match trajectories {
        Some(p) => {
            let paths = io::read_trajectories(p)?;
            if paths.is_empty() {
                return Err(Error::file(p, "no trajectories"));
            }
            let mut total = 0.0;
            for s in &paths {
                total += path_curvature(s)?;
            }
            Some(total / paths.len() as f64)
        }
        None => None,
    };
    let args = json!({
        "samples": path_str(samples),
        "target": path_str(target),
        "trajectories": trajectories.map(path_str),
    });
    let mut run = Run::create(out, "eval", args, None)?;
    run.input(samples)?;
    run.input(target)?;
    if let Some(p) = trajectories {
        run.input(p)?;
    }
    let report = json!({ "w2": w2, "w": w2.sqrt(), "n": a.len(), "curvature": curvature });
    io::write_json(&run.path("eval.json"), &report)?;
    run.finish(report)
}

fn bench_ot(n: usize, cluster_size: usize, batch_size: usize, seed: u64, out: &Path) -> Result<Value> {
    if cluster_size == 0 || batch_size == 0 {
        return Err(Error::parameter("cluster_size", "sizes must be at least 1"));
    }
    let target = generate(&DatasetSpec::default_for(DatasetKind::FiveGaussians, n), seed)?;
    let source = generate(&DatasetSpec::standard_source(n), seed.wrapping_add(1))?;
    let k = n.div_ceil(cluster_size).max(1);
    let (kmeans_ms, model) = time_ot_epoch(|| kmeans(&target, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL))?;
    let members = model.split(&target);
    // each cluster meets an equally sized slice of the source draws
    let mut offset = 0;
    let mut src_chunks = Vec::with_capacity(k);
    for c in &members {
        src_chunks.push(source.points[offset..offset + c.len()].to_vec());
        offset += c.len();
    }
    let tgt_chunks: Vec<Vec<Vec2>> = members.iter().map(|c| c.points.clone()).collect();
    let (cluster_ms, cluster_solves) = time_ot_epoch(|| solve_chunks(&src_chunks, &tgt_chunks))?;
    let (batch_ms, _) = time_ot_epoch(|| couple_batch_ot(&source.points, &target.points, batch_size, seed))?;
    let batch_solves = n.div_ceil(batch_size);
    let sizes = model.sizes();
    let report = json!({
        "n": n,
        "k": k,
        "cluster_solves": cluster_solves,
        "largest_cluster": sizes.iter().max(),
        "smallest_cluster": sizes.iter().min(),
        "cluster_ot_ms": cluster_ms,
        "batch_solves": batch_solves,
        "batch_ot_ms": batch_ms,
        "ratio": cluster_ms / batch_ms,
        "kmeans_ms": kmeans_ms,
    });
    let args = json!({ "n": n, "cluster_size": cluster_size, "batch_size": batch_size, "seed": seed });
    let run = Run::create(out, "bench-ot", args, None)?;
    io::write_json(&run.path("timing.json"), &report)?;
    run.finish(report)
}

fn table1(args: &ConfigArgs, seeds: u64, jobs: usize, out: &Path) -> Result<Value> {
    if seeds == 0 {
        return Err(Error::parameter("seeds", "must be at least 1"));
    }
    let (base, overrides) = load_config(args, &[])?;
    let datasets = [DatasetKind::FiveGaussians, DatasetKind::TwoMoons, DatasetKind::Checkerboard];
    let configs = benchmark_matrix(&base, &datasets, seeds);
    let cells = run_cells(&configs, jobs.max(1));
    let run = Run::create(
        out,
        "table1",
        json!({ "cfg": config_args_json(args), "seeds": seeds }),
        Some((&base, &overrides)),
    )?;
    let rows: Vec<_> = cells.iter().map(|c| c.row()).collect();
    io::write_text(&run.path("results.csv"), &results_csv(&rows))?;
    let round_rows: Vec<_> = cells.iter().flat_map(|c| c.round_rows()).collect();
    io::write_text(&run.path("rounds.csv"), &rounds_csv(&round_rows))?;
    let mut failed = Vec::new();
    for c in &cells {
        let name = format!(
            "{}-{}-s{}",
            c.config.dataset.kind().name(),
            c.config.method.name(),
            c.config.seeds.data
        );
        match &c.outcome {
            Ok(o) => {
                write_cell_artifacts(&run.path("cells").join(&name), o)?;
            }
            Err(msg) => failed.push(json!({ "cell": name, "message": msg })),
        }
    }
    // failed cells are reported in the CSV status column, not as an exit code
    run.finish(json!({ "cells": cells.len(), "failed": failed }))
}

fn plot_run(dir: &Path, output: Option<&Path>, title: &str) -> Result<Value> {
    let required = dir.join("samples.csv");
    if !required.is_file() {
        return Err(Error::file(&required, "missing artifact"));
    }
    let optional = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    let samples = required;
    let mut fig = Figure {
        title: title.to_string(),
        generated: io::read_points_csv(&samples)?,
        ..Figure::default()
    };
    let mut inputs = vec![samples];
    if let Some(p) = optional("target.csv") {
        fig.target = io::read_points_csv(&p)?;
        inputs.push(p);
    }
    if let Some(p) = optional("source_samples.csv") {
        fig.source = io::read_points_csv(&p)?;
        inputs.push(p);
    }
    if let Some(p) = optional("trajectories.csv") {
        fig.trajectories = io::read_trajectories(&p)?;
        inputs.push(p);
    }
    if let Some(p) = optional("sources.json") {
        fig.cluster_means = io::read_sources(&p)?.iter().map(|s| s.mu).collect();
        inputs.push(p);
    }
    let output = output.map(Path::to_path_buf).unwrap_or_else(|| dir.join("plot.svg"));
    let args = json!({ "run": path_str(dir), "output": path_str(&output), "title": title });
    let mut run = Run::beside(&output, "plot", args)?;
    for p in &inputs {
        run.input(p)?;
    }
    io::write_text(&output, &plot::render(&fig))?;
    run.finish(json!({
        "output": path_str(&output),
        "polylines": fig.trajectories.len(),
        "cluster_means": fig.cluster_means.len(),
    }))
}
