//! `bowsim` command-line pipelines: FDM reference runs, surrogate training,
//! evaluation, Hessian spectra, loss landscapes, WAV rendering and SVG plots.
//! Every command writes into one output directory and records what it wrote
//! in `manifest.json`.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod wav;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("training failed: {msg}; last finite parameters in {}", checkpoint.display())]
    Training { msg: String, checkpoint: PathBuf },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Training { .. } => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<bowsim_core::Error> for CliError {
    fn from(e: bowsim_core::Error) -> Self {
        match e {
            bowsim_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bowsim", version, about = "Bowed mass-spring oscillator: FDM reference, physics-informed surrogates and diagnostics")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `[train] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for test-set evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reference trajectory by the implicit midpoint solver.
    Fdm,
    /// Time-marching PINN for the scenario's initial condition.
    TrainPinn,
    /// Physics-only PI-DeepONet.
    TrainDeeponet,
    /// PI-DeepONet with FDM observations of the scenario trajectory.
    TrainHybrid,
    /// Metrics of the checkpoint against the FDM reference.
    Eval,
    /// Top Hessian eigenpairs and eigenvalue density at the checkpoint.
    Hessian,
    /// Loss on a random two-dimensional plane through the checkpoint.
    Landscape,
    /// Render `p` to a 16-bit WAV at 44.1 kHz.
    Synth {
        /// Trajectory CSV (`t,p,...`) to render instead of `[output.synth] source`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Deterministic SVG figure.
    Plot {
        /// friction, trajectory, residuals, density, landscape or stickslip
        kind: String,
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fdm => "fdm",
            Command::TrainPinn => "train-pinn",
            Command::TrainDeeponet => "train-deeponet",
            Command::TrainHybrid => "train-hybrid",
            Command::Eval => "eval",
            Command::Hessian => "hessian",
            Command::Landscape => "landscape",
            Command::Synth { .. } => "synth",
            Command::Plot { .. } => "plot",
        }
    }
}

/// Parses arguments (without the program name handled by clap) and runs.
pub fn run(cli: Cli) -> Result<pipeline::Outcome, CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let config = match &cli.config {
        Some(path) => {
            let mut c = RunConfig::load(path)?;
            if let Some(seed) = cli.seed {
                c.set_seed(seed);
            }
            Some(c)
        }
        None => None,
    };
    let needs_config = !matches!(cli.command, Command::Plot { .. });
    let config = match config {
        Some(c) => c,
        None if needs_config => {
            return Err(CliError::Usage(format!("{} needs --config <file>", cli.command.name())));
        }
        None => RunConfig::parse("[scenario]\nbow_force = 0.0\n")?,
    };
    let out = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    let ctx = pipeline::Context { config, out, threads: cli.threads };
    pipeline::execute(&ctx, &cli.command)
}
