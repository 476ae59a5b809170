use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wedflow::config::CONFIG_SCHEMA;
use wedflow::error::WedError;
use wedflow::run::{list_models, run_experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "wedflow", version, about = "Weighted energy-dissipation solver for perturbed gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Output directory (default: run.output_dir, then ./wedflow-out).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads for cold-start epsilon sweeps.
        #[arg(long, value_name = "N", default_value_t = 1)]
        parallel: usize,
        /// Seed for the sampling verifiers (overrides run.seed).
        #[arg(long, value_name = "INT")]
        seed: Option<u64>,
    },
    /// Print the catalog of potentials and reaction models.
    ListModels,
    /// Print an annotated config template covering every key.
    PrintConfigSchema,
}

const EXIT_OTHER: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListModels => {
            print!("{}", list_models());
            ExitCode::SUCCESS
        }
        Command::PrintConfigSchema => {
            print!("{CONFIG_SCHEMA}");
            ExitCode::SUCCESS
        }
        Command::Run { config, out, parallel, seed } => run(config, out, parallel, seed),
    }
}

fn run(path: PathBuf, out: Option<PathBuf>, parallel: usize, seed: Option<u64>) -> ExitCode {
    let parsed = std::fs::read_to_string(&path)
        .map_err(|e| WedError::Config(format!("cannot read {}: {e}", path.display())))
        .and_then(|text| ExperimentConfig::parse(&text));
    let config = match parsed {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error in {}: {e}", path.display());
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let defaults = RunOptions::default();
    let out_dir = out.or_else(|| config.run.output_dir.as_ref().map(PathBuf::from)).unwrap_or(defaults.out_dir);
    let options = RunOptions { out_dir, parallel, seed };
    match run_experiment(&config, &options) {
        Ok(summary) => {
            for file in &summary.files {
                println!("{}", file.display());
            }
            for msg in &summary.messages {
                eprintln!("{msg}");
            }
            if summary.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NONCONVERGENCE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, WedError::Config(_)) { EXIT_PARSE } else { EXIT_OTHER })
        }
    }
}
