use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;
mod verify;

use config::{RunConfig, DEFAULT_SEED};
use output::Output;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, input or I/O; exit 2.
    Config(String),
    /// A check found a mismatch; exit 1.
    Verification(String),
}

impl From<spikekit::Error> for CliError {
    fn from(e: spikekit::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "spikekit",
    version,
    about = "Spike codec, allocation, cost and PE array tools"
)]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the exact-equivalence suites.
    Verify,
    /// Quantize and encode a tensor into a spike train.
    Encode {
        /// Tensor file or headerless CSV of reals.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare spike and dense matmul on random operands.
    MatmulCheck,
    /// Profile MED on the toy model.
    Med,
    /// Assign timesteps per layer and modality.
    Allocate {
        /// MED profile CSV; profiled from the toy model when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// FLOPs table for a scenario set.
    Cost,
    /// Simulate the PE array and report peak metrics.
    Pesim,
    /// Run the toy model on all paths and report per-layer metrics.
    Pipeline,
    /// Write every report into the output directory.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = Output::new(cli.out, cli.format);
    match cli.command {
        Command::Verify => verify::run(&cfg, seed, &out),
        Command::Encode { input } => commands::encode(&cfg, input.as_deref(), &out),
        Command::MatmulCheck => commands::matmul_check(&cfg, seed, &out),
        Command::Med => commands::med(&cfg, seed, &out),
        Command::Allocate { input } => commands::allocate(&cfg, seed, input.as_deref(), &out),
        Command::Cost => commands::cost(&cfg, &out),
        Command::Pesim => commands::pesim(&cfg, seed, &out),
        Command::Pipeline => commands::pipeline(&cfg, seed, &out),
        Command::Report => commands::report(&cfg, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
