//! `mrct`: design, analysis and simulation of multi-regional clinical trials.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mrct_core::MrctError;

#[derive(Debug, Parser)]
#[command(
    name = "mrct",
    version,
    about = "Design and analysis of multi-regional clinical trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory receiving the output files.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Master seed; overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Number of design replications; overrides the configuration.
    #[arg(long = "m-design", global = true, value_name = "N")]
    m_design: Option<usize>,

    /// Verification runs per design replication; overrides the configuration.
    #[arg(long = "m-verify", global = true, value_name = "N")]
    m_verify: Option<usize>,

    /// Validate the configuration and print diagnostics without running.
    #[arg(long = "dry-run", global = true)]
    dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Overall and regional sample sizes with per-region consistency probability.
    Design,
    /// Consistency probability per region at a given or solved sample size.
    Cp,
    /// Lower bound on the consistency probability and the sizes attaining it.
    Bound,
    /// Consistency probability of one region over a grid of allocation fractions.
    Profile,
    /// Random-effects analysis of regional estimates.
    Analyze,
    /// Monte Carlo verification of the design procedure.
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Cp => "cp",
            Command::Bound => "bound",
            Command::Profile => "profile",
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

/// Everything a subcommand needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
    pub m_design: Option<usize>,
    pub m_verify: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit status 1.
    Model(MrctError),
    /// Exit status 2.
    Io(String),
    /// Exit status 2.
    Schema(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) => 1,
            CliError::Io(_) | CliError::Schema(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Schema(m) => write!(f, "schema error: {m}"),
        }
    }
}

impl From<MrctError> for CliError {
    fn from(e: MrctError) -> Self {
        CliError::Model(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let run = RunConfig {
        command: cli.command,
        config_path,
        output_dir: cli.out,
        seed: cli.seed,
        format: cli.format,
        m_design: cli.m_design,
        m_verify: cli.m_verify,
    };
    if cli.dry_run {
        return match config::validate_config(run.command, &run.config_path) {
            Ok(diag) => {
                print!("{diag}");
                ExitCode::from(if diag.errors.is_empty() { 0 } else { 1 })
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        };
    }
    match commands::run(&run) {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
