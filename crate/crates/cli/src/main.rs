//! `lieconv` command-line experiments.
//!
//! Exit codes: 0 success or passing check, 1 failed check or runtime error,
//! 2 usage error.

mod alloc;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lieconv::dynamics::ModelKind;
use lieconv::matlie::Precision;

#[global_allocator]
static ALLOC: alloc::Counting = alloc::Counting;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// A property check did not pass (exit 1).
    Check(String),
    /// Anything else that went wrong at run time (exit 1).
    Run(String),
}

impl From<lieconv::Error> for Failure {
    fn from(e: lieconv::Error) -> Self {
        match e {
            lieconv::Error::Config(m) => Failure::Usage(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "lieconv", version, about = "LieConv experiments, audits and benchmarks")]
struct Cli {
    /// Worker threads (1 gives bitwise reproducible runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file of defaults for the subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a spring-system dataset.
    GenData(GenDataFlags),
    /// Train a dynamics model on a dataset.
    Train(TrainFlags),
    /// Roll out a model from a dataset state and report conserved quantities.
    Rollout(RolloutFlags),
    /// Audit a random-weight model's equivariance.
    CheckEquivariance(EquivarianceFlags),
    /// Compare the naive and factored LieConv forward passes.
    BenchPointconv(BenchFlags),
    /// Write the lifted neighborhoods of a random point set as CSV.
    DumpNeighborhood(NeighborhoodFlags),
}

#[derive(Args, Debug, Serialize)]
pub struct GenDataFlags {
    /// Number of training systems.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub bodies: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub kernel_hidden: Option<usize>,
    #[arg(long)]
    pub fc_hidden: Option<usize>,
    /// Defaults to 100 sqrt(1000 / D).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RolloutFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Directory written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EquivarianceFlags {
    #[arg(long)]
    pub group: Option<String>,
    /// Group the transformations are drawn from (default: the model group).
    #[arg(long)]
    pub transform: Option<String>,
    #[arg(long)]
    pub lifts: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub transforms: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Defaults to 1e-5 (single) or 1e-10 (double).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchFlags {
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub c_in: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub c_out: Option<Vec<usize>>,
    /// Width of the kernel MLP's last hidden layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_neighbors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct NeighborhoodFlags {
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lifts: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_neighbors: Option<usize>,
    /// Only this center (default: all).
    #[arg(long)]
    pub center: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    let file = cli.config.as_deref();
    match &cli.command {
        Command::GenData(f) => commands::gen_data(config::resolve(file, f)?),
        Command::Train(f) => commands::train(config::resolve(file, f)?),
        Command::Rollout(f) => commands::rollout(config::resolve(file, f)?),
        Command::CheckEquivariance(f) => commands::check_equivariance(config::resolve(file, f)?),
        Command::BenchPointconv(f) => commands::bench_pointconv(config::resolve(file, f)?),
        Command::DumpNeighborhood(f) => commands::dump_neighborhood(config::resolve(file, f)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
