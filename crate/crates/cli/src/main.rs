//! `sdeproj`: config-driven front end for projecting ambient SDEs onto
//! embedded submanifolds and measuring the projections' errors.
//!
//! Exit status: 0 success, 1 invalid input, 2 numerical or i/o failure,
//! 3 a `check` failed.

mod commands;
mod config;
mod error;
mod output;
mod plot;
mod registry;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "sdeproj",
    version,
    about = "Projections of ambient SDEs onto submanifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip chart rendering.
    #[arg(long, global = true)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Coefficient table of the three projections at the configured points.
    Project,
    /// Simulate and write error series CSVs and charts.
    Errors,
    /// Simulate and fit small-time Taylor coefficients.
    Taylor,
    /// Run the invariant suite.
    Check,
    /// Print a ready-made configuration.
    Example {
        /// One of the registered example names.
        name: String,
    },
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Example { name } = &cli.command {
        let cfg = registry::example(name).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown example '{name}'; expected one of {}",
                registry::NAMES.join(", ")
            ))
        })?;
        println!("{}", cfg.to_json());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    let run = load(cli.config.as_deref(), cli.seed)?.build()?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&run.config.output.dir));
    std::fs::create_dir_all(&out)?;
    let plots = run.config.output.plots && !cli.no_plots;
    let report = match cli.command {
        Command::Project => commands::project(&run, &out)?,
        Command::Errors => commands::errors(&run, &out, plots)?,
        Command::Taylor => commands::taylor(&run, &out)?,
        Command::Check => commands::check(&run, &out)?,
        Command::Example { .. } => unreachable!("handled above"),
    };
    print!("{}", report.text);
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    if report.failures > 0 {
        return Err(CliError::CheckFailed(report.failures));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
