use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use romforge::cli::{self, ExperimentConfig};

/// Reduced-basis experiment runner: POD, plain and box-constrained Galerkin
/// ROMs, residual error indicators, and greedy parametric sampling on
/// desk-scale full-order models.
#[derive(Parser)]
#[command(name = "romforge", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config into its output
    /// directory.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Summarize an artifact directory.
    Inspect {
        /// Artifact directory produced by `run`.
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("ROMFORGE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("could not cap worker count: {e}");
                }
            }
            _ => {
                eprintln!("ROMFORGE_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }

    let args = Args::parse();
    let result = match args.command {
        Command::Run { config, force } => ExperimentConfig::from_path(&config)
            .map_err(cli::CliError::from)
            .and_then(|cfg| cli::run_experiment(&cfg, force)),
        Command::Inspect { dir } => cli::inspect_dir(&dir).map(|summary| {
            print!("{summary}");
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
