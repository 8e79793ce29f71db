//! Command-line driver: dataset generation, training, adversarial
//! fine-tuning, attacks, soundness verification, and report rendering.
//!
//! Every subcommand is a pure function of (config, input files, seed).
//! Exit codes: 0 success, 1 validation failure (bad arguments, parse errors,
//! failed verification), 2 internal error. Errors go to standard error with
//! a machine-parsable `error[<category>]:` prefix.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod data;

/// A failure with its exit classification.
pub enum CliError {
    Validation(String),
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "advsolve",
    version,
    about = "Sound adversarial perturbations and attacks for toy SAT/TSP neural solvers"
)]
struct Cli {
    /// Experiment config (TOML). Flags override config values; config
    /// overrides built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired SAT formulas (unsatisfiable + satisfiable twin).
    GenSat {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of pairs.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Generate unit-square TSP instances with dual decision labels.
    GenTsp {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a surrogate on a generated dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model role: sat | dtsp | convtsp (defaults to the config).
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarially fine-tune a SAT checkpoint on its training data.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Attack a dataset with PGD and the random baseline; write per-instance
    /// CSV, summary, and the perturbed instances.
    Attack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Unsat edit model: auto | del | adc (SAT datasets only).
        #[arg(long)]
        mode: Option<String>,
        /// Budget override: edit fraction for SAT models, node count for TSP.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check every perturbed instance in an attack directory against the
    /// exact oracles; nonzero exit iff any instance fails.
    Verify {
        #[arg(long)]
        attacks: PathBuf,
    },
    /// Render the per-instance CSV of an attack directory into the summary.
    Report {
        #[arg(long)]
        attacks: PathBuf,
        /// Write the summary CSV here as well as printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run(cli);
    match outcome {
        Ok(code) => code,
        Err(CliError::Validation(msg)) => {
            eprintln!("error[invalid-argument]: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error[internal]: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let config = commands::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenSat { out, seed, count } => {
            commands::gen_sat(&config, &out, seed, count)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenTsp { out, seed, count } => {
            commands::gen_tsp(&config, &out, seed, count)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { data, out, role, seed, epochs } => {
            commands::train(&config, &data, &out, role.as_deref(), seed, epochs)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune { data, model, out, seed } => {
            commands::finetune(&config, &data, &model, &out, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { data, model, out, mode, budget, steps, seed } => {
            commands::attack(&config, &data, &model, &out, mode.as_deref(), budget, steps, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { attacks } => {
            let all_sound = commands::verify(&attacks)?;
            if all_sound {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(CliError::Validation("soundness verification failed".into()))
            }
        }
        Command::Report { attacks, out } => {
            commands::report(&attacks, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
