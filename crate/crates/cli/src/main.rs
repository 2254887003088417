//! `pxg`: simulate data, fit covariate-dependent graphical models, and
//! post-process the retained draws.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pxg", version, about = "Covariate-dependent Gaussian graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset with known graphs.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler and store the retained draws.
    Fit(FitArgs),
    /// Dahl partition, edge probabilities and per-cluster graphs.
    Summarize(SummarizeArgs),
    /// Edge probabilities at new covariate values.
    Predict(PredictArgs),
    /// Deviance information criteria.
    Dic(DicArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Design: 1 (three regions, q = 3), 2 (chain, q = 5) or 3 (two clusters).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub example: u8,
    /// Observations per region; for example 2 the total sample size.
    #[arg(long)]
    pub n_per: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub df: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendName {
    Gwishart,
    Pseudo,
}

impl BackendName {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendName::Gwishart => "gwishart",
            BackendName::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long, value_enum, default_value = "gwishart")]
    pub backend: BackendName,
    /// JSON hyperparameter overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total sweeps, burn-in included.
    #[arg(long, default_value_t = 1500)]
    pub iters: usize,
    #[arg(long, default_value_t = 500)]
    pub burn: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Subtract column means from Y.
    #[arg(long)]
    pub center: bool,
    /// Center and scale each column of Y to unit variance.
    #[arg(long)]
    pub standardize: bool,
    /// Single-cluster fit (K = 1), as needed by the covariate-only DIC.
    #[arg(long)]
    pub pooled: bool,
    /// Allow the G-Wishart backend beyond 15 responses.
    #[arg(long)]
    pub force: bool,
    /// Worker threads; results do not depend on this value.
    #[arg(long, env = "PXG_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Symmetrize {
    Union,
    Intersection,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    #[arg(long, value_enum, default_value = "union")]
    pub symmetrize: Symmetrize,
    /// Also write each cluster's edges sorted by probability.
    #[arg(long)]
    pub ranked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Rb,
    Sampled,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub xnew: PathBuf,
    #[arg(long, value_enum, default_value = "rb")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "union")]
    pub symmetrize: Symmetrize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DicArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Trace of a `fit --pooled` run on the same data.
    #[arg(long)]
    pub pooled_trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Dic(a) => commands::dic(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pxg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
