//! `cotfm`: dataset generation, training, alternation, sampling, evaluation,
//! reverse-ODE inspection, OT timing, the benchmark matrix and plotting.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cotfm_core::error::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "cotfm", version, about = "Cluster-wise OT flow matching on 2D point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every verb that builds an experiment config.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML experiment config; the default 2D protocol when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key after parsing, e.g. --set epochs=100 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Output directory; each run writes into a subdirectory named by its config hash
    #[arg(long, env = "COTFM_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset as CSV plus a JSON sidecar
    Gen {
        /// five_gaussians, two_moons, checkerboard or isotropic_gaussian
        #[arg(long, default_value = "five_gaussians")]
        dataset: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the flow-matching model of the config's method (COT-FM trains its rectified-flow bootstrap)
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Method override: rectified_flow, ot_cfm, cot_fm or reflow
        #[arg(long)]
        method: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run COT-FM alternation from a pretrained checkpoint and evaluate every round
    Alternate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pretrained checkpoint manifest; trained from scratch when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Draw samples by integrating a checkpoint forward
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Euler steps (NFE)
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cluster source JSON; the global isotropic source when omitted
        #[arg(long)]
        sources: Option<PathBuf>,
        /// JSON array of mixture weights; uniform when omitted
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Std of the global source
        #[arg(long, default_value_t = 0.6)]
        source_std: f64,
        /// Trajectories written to trajectories.csv
        #[arg(long, default_value_t = 64)]
        dump: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Integrate target points backward to recover their source points
    Reverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Point CSV to pull back
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Cluster model JSON; fits one source per cluster when given
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dump: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Squared 2-Wasserstein between two point CSVs, plus curvature of a trajectory dump
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Trajectory CSV for the curvature column
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Time one epoch of cluster-wise OT against minibatch OT on the same data
    BenchOt {
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        /// Points per cluster solve
        #[arg(long, default_value_t = 500)]
        cluster_size: usize,
        /// Points per minibatch solve
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run every method on every 2D dataset and write the results matrix
    Table1 {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seeds per (dataset, method) cell
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Worker threads; cells sharing a bootstrap run on one worker
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Render a run directory's samples, trajectories and cluster means as SVG
    Plot {
        /// Run directory with samples.csv; target.csv, source_samples.csv, trajectories.csv and sources.json are drawn when present
        #[arg(long)]
        run: PathBuf,
        /// Output file; <run>/plot.svg when omitted
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Alternate { .. } => "alternate",
            Command::Sample { .. } => "sample",
            Command::Reverse { .. } => "reverse",
            Command::Eval { .. } => "eval",
            Command::BenchOt { .. } => "bench-ot",
            Command::Table1 { .. } => "table1",
            Command::Plot { .. } => "plot",
        }
    }
}

fn error_json(verb: &str, err: &Error) -> serde_json::Value {
    let (stage, inner) = match err {
        Error::Stage { stage, source } => (stage.to_string(), source.as_ref()),
        other => (verb.to_string(), other),
    };
    let mut context = json!({ "verb": verb });
    if let Error::File { path, .. } = inner {
        context["path"] = json!(path);
    }
    if let Error::Parameter { field, .. } = inner {
        context["field"] = json!(field);
    }
    json!({ "stage": stage, "message": inner.to_string(), "context": context })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verb = cli.command.verb();
    match commands::dispatch(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(verb, &e));
            ExitCode::from(1)
        }
    }
}
