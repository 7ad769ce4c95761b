//! Training orchestration: the rectified-flow bootstrap, the batch-OT
//! baseline, the alternating cluster-OT procedure, reflow, and evaluation.

mod config;
mod table1;
mod train;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ClusterSampling, ExperimentConfig, Method, NetConfig, Seeds, TRAIN_N_2D};
pub use table1::{
    benchmark_matrix, results_csv, rounds_csv, run_cells, write_cell_artifacts, CellResult, ResultRow, RoundRow,
    RunArtifact,
};
pub use train::{cluster_pairs, train_fm, Coupler, PairSet, TrainLog, TrainSettings};

use crate::clustering::{cluster_weights, kmeans, ClusterModel};
use crate::coupling::couple_reflow;
use crate::datasets::{generate, PointCloud};
use crate::error::{Error, Result};
use crate::flow::{self, draw_mixture, fit_cluster_sources, sample_source, GaussianSource, Trajectory};
use crate::metrics::{curvature, wasserstein2, EvalReport};
use crate::net::VectorFieldNet;
use crate::rng::{mix, Stream};
use crate::Vec2;

/// Pipeline stages, recorded in call order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Pretrain,
    Train,
    BatchOt,
    Kmeans,
    ReverseOde,
    ClusterOt,
    Reflow,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::BatchOt => "batch_ot",
            Stage::Kmeans => "kmeans",
            Stage::ReverseOde => "reverse_ode",
            Stage::ClusterOt => "cluster_ot",
            Stage::Reflow => "reflow",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Audit {
    pub stages: Vec<Stage>,
    pub wall_ms: BTreeMap<String, f64>,
}

impl Audit {
    /// Run `f` as `stage`: record it, time it, and tag its errors.
    pub fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.stages.push(stage);
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage.name()));
        *self.wall_ms.entry(stage.name().to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }

    pub fn touched(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// How evaluation draws initial points.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampler {
    Global(GaussianSource),
    Mixture {
        sources: Vec<GaussianSource>,
        weights: Vec<f64>,
    },
}

/// Training split and held-out evaluation targets of a config.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(PointCloud, PointCloud)> {
    let train = generate(&cfg.dataset, cfg.seeds.data)?;
    let mut eval_spec = cfg.dataset.clone();
    eval_spec.n = cfg.n_eval;
    let eval = generate(&eval_spec, cfg.seeds.eval)?;
    Ok((train, eval))
}

pub fn global_source(cfg: &ExperimentConfig) -> Result<GaussianSource> {
    GaussianSource::isotropic([0.0, 0.0], cfg.source_std)
}

fn settings(cfg: &ExperimentConfig, epochs: usize, seed: u64) -> TrainSettings {
    TrainSettings {
        epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        grad_clip: cfg.grad_clip,
        seed,
    }
}

fn init_net(cfg: &ExperimentConfig) -> Result<VectorFieldNet> {
    VectorFieldNet::glorot(&cfg.net.layer_sizes, cfg.net.activation, cfg.seeds.init)
}

/// Rectified flow from scratch: random coupling with the global source.
pub fn pretrain(cfg: &ExperimentConfig, data: &PointCloud, audit: &mut Audit) -> Result<(VectorFieldNet, TrainLog)> {
    let source = global_source(cfg)?;
    let mut net = init_net(cfg)?;
    let log = audit.run(Stage::Pretrain, || {
        let coupler = Coupler::Random {
            source: &source,
            targets: &data.points,
        };
        train_fm(&mut net, &coupler, &settings(cfg, cfg.epochs, cfg.seeds.train))
    })?;
    Ok((net, log))
}

/// Batch-wise OT baseline from scratch.
pub fn train_ot_cfm(cfg: &ExperimentConfig, data: &PointCloud, audit: &mut Audit) -> Result<(VectorFieldNet, TrainLog)> {
    let source = global_source(cfg)?;
    let mut net = init_net(cfg)?;
    let mut ot_cfg = cfg.clone();
    ot_cfg.batch_size = cfg.ot_batch;
    let log = audit.run(Stage::BatchOt, || {
        let coupler = Coupler::BatchOt {
            source: &source,
            targets: &data.points,
        };
        train_fm(&mut net, &coupler, &settings(&ot_cfg, cfg.epochs, cfg.seeds.train))
    })?;
    Ok((net, log))
}

/// Generated samples, the dumped trajectories and the metrics.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub starts: Vec<Vec2>,
    pub generated: Vec<Vec2>,
    pub trajectories: Vec<Trajectory>,
}

/// Sample `target.len()` points with `cfg.t_sample` Euler steps and compare
/// them with the held-out targets.
pub fn evaluate(net: &VectorFieldNet, sampler: &Sampler, target: &[Vec2], cfg: &ExperimentConfig) -> Result<Evaluation> {
    let n = target.len();
    let seed = mix(cfg.seeds.eval, 1);
    let mut wall = BTreeMap::new();
    let t0 = Instant::now();
    let starts = match sampler {
        Sampler::Global(gs) => sample_source(gs, n, seed).points,
        Sampler::Mixture { sources, weights } => draw_mixture(sources, weights, n, seed)?.0,
    };
    let trajs = flow::forward_trajectories(net, &starts, cfg.t_sample)?;
    wall.insert("sample".to_string(), t0.elapsed().as_secs_f64() * 1e3);
    let generated: Vec<Vec2> = trajs.iter().map(Trajectory::endpoint).collect();
    let t1 = Instant::now();
    let w2 = wasserstein2(&generated, target)?;
    wall.insert("w2".to_string(), t1.elapsed().as_secs_f64() * 1e3);
    let curv = curvature(&trajs)?;
    let report = EvalReport {
        wasserstein2: w2,
        wasserstein: w2.sqrt(),
        curvature: curv,
        nfe: cfg.t_sample,
        n_eval: n,
        seed: cfg.seeds.eval,
        wall_ms: wall,
    };
    let dump = cfg.trajectory_dump.min(trajs.len());
    Ok(Evaluation {
        report,
        starts,
        generated,
        trajectories: trajs.into_iter().take(dump).collect(),
    })
}

/// State after each alternation round.
#[derive(Clone, Debug)]
pub struct Round {
    pub round: usize,
    pub sources: Vec<GaussianSource>,
    pub weights: Vec<f64>,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct AlternationOutcome {
    pub net: VectorFieldNet,
    pub sources: Vec<GaussianSource>,
    pub weights: Vec<f64>,
    pub clusters: Option<ClusterModel>,
    pub rounds: Vec<Round>,
}

impl AlternationOutcome {
    pub fn sampler(&self) -> Option<Sampler> {
        (!self.sources.is_empty()).then(|| Sampler::Mixture {
            sources: self.sources.clone(),
            weights: self.weights.clone(),
        })
    }
}

fn sampling_weights(model: &ClusterModel, sampling: ClusterSampling) -> Vec<f64> {
    match sampling {
        ClusterSampling::Proportional => cluster_weights(model),
        ClusterSampling::Uniform => vec![1.0 / model.k as f64; model.k],
    }
}

/// Alternate source refinement and model fine-tuning, starting from a
/// pretrained net. `after_round` sees the state at the end of every round.
pub fn cotfm_alternate(
    pretrained: VectorFieldNet,
    data: &PointCloud,
    cfg: &ExperimentConfig,
    audit: &mut Audit,
    mut after_round: impl FnMut(&Round, &VectorFieldNet) -> Result<()>,
) -> Result<AlternationOutcome> {
    let mut net = pretrained;
    let mut clusters: Option<ClusterModel> = None;
    let mut out_sources = Vec::new();
    let mut out_weights = Vec::new();
    let mut rounds = Vec::new();

    for round in 1..=cfg.alternations {
        if clusters.is_none() || cfg.recluster_each_round {
            let seed = mix(cfg.seeds.data, round as u64);
            let model = audit.run(Stage::Kmeans, || {
                kmeans(data, cfg.k, seed, cfg.kmeans_max_iter, cfg.kmeans_tol)
            })?;
            clusters = Some(model);
        }
        let model = clusters.as_ref().unwrap();
        let members = model.split(data);

        let sources = audit.run(Stage::ReverseOde, || fit_cluster_sources(&net, &members, cfg.t_train_reverse))?;

        let round_seed = mix(cfg.seeds.train, round as u64);
        let first = audit.run(Stage::ClusterOt, || {
            cluster_pairs(&sources, &members, cfg.lap_cap, &mut Stream::new(round_seed))
        })?;

        let log = audit.run(Stage::Train, || {
            let coupler = Coupler::ClusterOt {
                sources: &sources,
                members: &members,
                first: &first,
                sampling: cfg.cluster_sampling,
                lap_cap: cfg.lap_cap,
            };
            train_fm(&mut net, &coupler, &settings(cfg, cfg.finetune_epochs, mix(round_seed, u64::MAX)))
        })?;

        let weights = sampling_weights(model, cfg.cluster_sampling);
        let r = Round {
            round,
            sources: sources.clone(),
            weights: weights.clone(),
            log,
        };
        after_round(&r, &net)?;
        out_sources = sources;
        out_weights = weights;
        rounds.push(r);
    }

    Ok(AlternationOutcome {
        net,
        sources: out_sources,
        weights: out_weights,
        clusters,
        rounds,
    })
}

/// Fine-tune on pairs of global source draws and their own forward-ODE
/// endpoints under `net`.
pub fn reflow_finetune(
    net: VectorFieldNet,
    cfg: &ExperimentConfig,
    audit: &mut Audit,
) -> Result<(VectorFieldNet, TrainLog)> {
    let source = global_source(cfg)?;
    let src = sample_source(&source, cfg.dataset.n, mix(cfg.seeds.train, 7));
    let (plan, generated) = audit.run(Stage::Reflow, || couple_reflow(&net, &src, cfg.t_sample))?;
    let pairs = [PairSet {
        x0: plan.pairs.iter().map(|&(s, _)| src.points[s]).collect(),
        x1: plan.pairs.iter().map(|&(_, t)| generated.points[t]).collect(),
    }];
    let mut net = net;
    let epochs = cfg.finetune_epochs * cfg.alternations.max(1);
    let log = audit.run(Stage::Train, || {
        let coupler = Coupler::Pairs {
            clusters: &pairs,
            sampling: ClusterSampling::Proportional,
        };
        train_fm(&mut net, &coupler, &settings(cfg, epochs, mix(cfg.seeds.train, 8)))
    })?;
    Ok((net, log))
}

/// Metrics of one alternation round (round 0 is the pretrained model).
#[derive(Clone, Debug)]
pub struct RoundEval {
    pub round: usize,
    pub report: EvalReport,
    pub sources: Vec<GaussianSource>,
}

/// Everything one experiment cell produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub net: VectorFieldNet,
    pub evaluation: Evaluation,
    pub sampler: Sampler,
    pub rounds: Vec<RoundEval>,
    /// Round with the lowest W2, when there are rounds.
    pub best_round: Option<usize>,
    /// Weights of `best_round`.
    pub best_net: Option<VectorFieldNet>,
    pub clusters: Option<ClusterModel>,
    pub losses: Vec<TrainLog>,
    pub audit: Audit,
    pub train_data: PointCloud,
    pub eval_target: PointCloud,
}

/// Pretrained bootstrap shared by cells with the same `pretrain_key`.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub net: VectorFieldNet,
    pub log: TrainLog,
    pub wall_ms: f64,
}

/// Run one cell. `pretrained` is reused when given (it must come from
/// [`pretrain`] under an identical `pretrain_key`).
pub fn run_experiment(cfg: &ExperimentConfig, pretrained: Option<&Pretrained>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut audit = Audit::default();
    let (train_data, eval_target) = audit.run(Stage::Data, || prepare_data(cfg))?;
    let global = Sampler::Global(global_source(cfg)?);

    let get_pretrained = |audit: &mut Audit| -> Result<(VectorFieldNet, TrainLog)> {
        match pretrained {
            Some(p) => {
                audit.stages.push(Stage::Pretrain);
                audit.wall_ms.insert(Stage::Pretrain.name().into(), p.wall_ms);
                Ok((p.net.clone(), p.log.clone()))
            }
            None => pretrain(cfg, &train_data, audit),
        }
    };

    let mut rounds = Vec::new();
    let mut losses = Vec::new();
    let mut clusters = None;
    let mut best_net = None;
    let mut final_eval = None;
    let (net, sampler) = match cfg.method {
        Method::RectifiedFlow => {
            let (net, log) = get_pretrained(&mut audit)?;
            losses.push(log);
            (net, global)
        }
        Method::OtCfm => {
            let (net, log) = train_ot_cfm(cfg, &train_data, &mut audit)?;
            losses.push(log);
            (net, global)
        }
        Method::Reflow => {
            let (pre, log) = get_pretrained(&mut audit)?;
            losses.push(log);
            let (net, log) = reflow_finetune(pre, cfg, &mut audit)?;
            losses.push(log);
            (net, global)
        }
        Method::CotFm => {
            let (pre, log) = get_pretrained(&mut audit)?;
            losses.push(log);
            let round0 = audit.run(Stage::Evaluate, || evaluate(&pre, &global, &eval_target.points, cfg))?;
            let mut best = (round0.report.wasserstein2, pre.clone());
            rounds.push(RoundEval {
                round: 0,
                report: round0.report,
                sources: Vec::new(),
            });
            let mut per_round: Vec<(usize, Evaluation)> = Vec::new();
            let mut eval_ms = 0.0;
            let outcome = cotfm_alternate(pre, &train_data, cfg, &mut audit, |r, net| {
                let sampler = Sampler::Mixture {
                    sources: r.sources.clone(),
                    weights: r.weights.clone(),
                };
                let start = Instant::now();
                let e = evaluate(net, &sampler, &eval_target.points, cfg).map_err(|e| e.in_stage(Stage::Evaluate.name()))?;
                eval_ms += start.elapsed().as_secs_f64() * 1e3;
                if e.report.wasserstein2 < best.0 {
                    best = (e.report.wasserstein2, net.clone());
                }
                per_round.push((r.round, e));
                Ok(())
            })?;
            *audit.wall_ms.entry(Stage::Evaluate.name().into()).or_default() += eval_ms;
            best_net = Some(best.1);
            for (r, (round, e)) in outcome.rounds.iter().zip(&per_round) {
                rounds.push(RoundEval {
                    round: *round,
                    report: e.report.clone(),
                    sources: r.sources.clone(),
                });
            }
            losses.extend(outcome.rounds.iter().map(|r| r.log.clone()));
            let sampler = outcome
                .sampler()
                .ok_or_else(|| Error::EmptyInput("alternation produced no sources"))?;
            clusters = outcome.clusters;
            // the last round was evaluated with exactly this net and sampler
            final_eval = per_round.pop().map(|(_, e)| e);
            (outcome.net, sampler)
        }
    };

    let evaluation = match final_eval {
        Some(e) => e,
        None => audit.run(Stage::Evaluate, || evaluate(&net, &sampler, &eval_target.points, cfg))?,
    };
    let best_round = rounds
        .iter()
        .min_by(|a, b| a.report.wasserstein2.total_cmp(&b.report.wasserstein2))
        .map(|r| r.round);
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        net,
        evaluation,
        sampler,
        rounds,
        best_round,
        best_net,
        clusters,
        losses,
        audit,
        train_data,
        eval_target,
    })
}

/// Pretrain once for `cfg`, timed, for sharing across cells.
pub fn pretrain_shared(cfg: &ExperimentConfig) -> Result<Pretrained> {
    let mut audit = Audit::default();
    let (train_data, _) = prepare_data(cfg)?;
    let start = Instant::now();
    let (net, log) = pretrain(cfg, &train_data, &mut audit)?;
    Ok(Pretrained {
        net,
        log,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
