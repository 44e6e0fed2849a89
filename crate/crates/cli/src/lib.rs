//! Command-line front end for the crawler solvers.
//!
//! Exit codes are a stable contract: 0 success, 1 a check failed, 2 bad
//! configuration or input, 3 solver or runtime failure.

pub mod commands;
pub mod config;
pub mod plot;
pub mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, Scenario};
pub use table::TrajectoryTable;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CRAWLER_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "crawler", version, about = "Dry-friction crawler: penalized and event-driven solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory; overrides `[output] dir` in the config.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Emit SVG plots next to the CSV output.
    #[arg(long, global = true)]
    pub plots: bool,
    /// Seed for test-function sampling and random windows.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine the penalized solver to the target accuracy and write the limit.
    Simulate(ConfigArg),
    /// Run the event-driven stick-slip solver.
    Oracle(ConfigArg),
    /// Tabulate the Cauchy bound against measured differences along a doubling schedule.
    Converge(ConfigArg),
    /// Check a trajectory CSV against the impulse relation and variational inequalities.
    Verify {
        #[command(flatten)]
        config: ConfigArg,
        /// Trajectory CSV written by `simulate` or `oracle`.
        trajectory: PathBuf,
    },
    /// Run both solvers and report their differences.
    Compare(ConfigArg),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input error: {0}")]
    Input(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (path, trajectory) = match &cli.command {
        Command::Simulate(c) | Command::Oracle(c) | Command::Converge(c) | Command::Compare(c) => (&c.config, None),
        Command::Verify { config, trajectory } => (&config.config, Some(trajectory)),
    };
    let mut scenario = config::load(path)?;
    if let Some(seed) = cli.seed {
        scenario.verify.seed = seed;
    }
    let ctx = commands::Context {
        out_dir: cli
            .out
            .clone()
            .or_else(|| scenario.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        plots: cli.plots || scenario.plots,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&scenario, &ctx),
        Command::Oracle(_) => commands::oracle(&scenario, &ctx),
        Command::Converge(_) => commands::converge(&scenario, &ctx),
        Command::Verify { .. } => commands::verify(&scenario, trajectory.expect("verify has a trajectory"), &ctx),
        Command::Compare(_) => commands::compare(&scenario, &ctx),
    }
}

/// `main` without the process exit, for embedding.
pub fn main_with(cli: &Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crawler: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
