use std::path::PathBuf;
use std::process::ExitCode;

use atc_diffusion::cli::{env_output_root, inspect_topology, run_experiment, run_sweep, validate, CliError};
use atc_diffusion::config::{load_config, SweepSpec};
use clap::{Parser, Subcommand};

/// Diffusion stochastic-subgradient simulator.
///
/// Exit codes: 0 success, 1 config error, 2 runtime abort.
/// Set DIFFSIM_OUTPUT_ROOT to place relative output directories under it.
#[derive(Parser)]
#[command(name = "diffsim", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, report.txt and plot.csv.
    Run { config: PathBuf },
    /// Run every point of a sweep spec and write a scaling summary.
    Sweep { spec: PathBuf },
    /// Check a config and print the resolved setup without running it.
    Validate { config: PathBuf },
    /// Validate a combination-matrix file and print its Perron vector.
    InspectTopology { file: PathBuf },
}

fn execute(cmd: Command) -> Result<(), CliError> {
    let root = env_output_root();
    match cmd {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let out = run_experiment(&cfg, root.as_deref())?;
            for w in &out.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", out.dir.display());
        }
        Command::Sweep { spec } => {
            let spec = SweepSpec::load(&spec)?;
            let out = run_sweep(&spec, root.as_deref())?;
            print!("{}", out.summary);
            println!("wrote {}", out.dir.display());
            if let Some(err) = out.points.into_iter().find_map(Result::err) {
                return Err(err);
            }
        }
        Command::Validate { config } => {
            let (text, warnings) = validate(&config)?;
            print!("{text}");
            for w in &warnings {
                println!("warning: {w}");
            }
        }
        Command::InspectTopology { file } => print!("{}", inspect_topology(&file)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Args::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
