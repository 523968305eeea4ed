use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use d2oc::sharing::SharingMethod;
use d2oc_cli::commands::{cmd_metrics, cmd_run, cmd_sample, cmd_validate};
use d2oc_cli::CliError;

/// Density-driven optimal control for multi-agent coverage.
#[derive(Parser)]
#[command(name = "d2oc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the sample-point cloud and write it as cloud.csv.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<SharingMethod>,
    },
    /// Evaluate one or more run directories.
    Metrics {
        /// Run directory; repeat for several runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Reference cloud CSV; defaults to each run's own cloud.
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        exact_limit: Option<usize>,
        /// Where metrics.json goes; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV table to append one row per run to.
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample { config, out, seed } => println!("{}", cmd_sample(&config, out.as_deref(), seed)?),
        Command::Run {
            config,
            out,
            seed,
            method,
        } => println!("{}", cmd_run(&config, out.as_deref(), seed, method)?.0),
        Command::Metrics {
            runs,
            cloud,
            exact_limit,
            out,
            batch,
        } => {
            if out.is_some() && runs.len() > 1 {
                return Err(CliError::Config("--out takes a single --run".into()));
            }
            for run in &runs {
                let (text, _) = cmd_metrics(run, cloud.as_deref(), exact_limit, out.as_deref(), batch.as_deref())?;
                println!("{text}");
            }
        }
        Command::Validate { config } => println!("{}", cmd_validate(&config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
