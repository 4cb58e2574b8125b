mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CliError;

/// Detect unknown errors in control systems by mining model coefficients from
/// traces and checking them against a conformal interval.
#[derive(Parser, Debug)]
#[command(name = "coefmon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long)]
    pub config: PathBuf,
    /// Primary output file; a `<out>.manifest.json` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write the logged trace as CSV.
    Simulate(Common),
    /// Mine one coefficient vector per window of a trace.
    Mine(Common),
    /// Calibrate a conformal profile from error-free traces.
    Calibrate(Common),
    /// Mine an operational trace window by window and write verdicts.
    Detect(Common),
    /// Output-robustness baseline: calibrate on clean traces, score a trace.
    Baseline(Common),
    /// Tabulate verdict files into detection metrics.
    Report(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Mine(c) => ("mine", c),
        Command::Calibrate(c) => ("calibrate", c),
        Command::Detect(c) => ("detect", c),
        Command::Baseline(c) => ("baseline", c),
        Command::Report(c) => ("report", c),
    };
    if let Some(j) = common.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Mine(c) => commands::mine(c),
        Command::Calibrate(c) => commands::calibrate(c),
        Command::Detect(c) => commands::detect(c),
        Command::Baseline(c) => commands::baseline(c),
        Command::Report(c) => commands::report(c),
    }
    .and_then(|outputs| manifest::write(name, common, &outputs));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Io { .. } => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::DetectMining { .. } => 3,
        }
    }
}
