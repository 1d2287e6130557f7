//! `lorentz-ot`: generate instances, solve, interpolate, regularize, verify
//! and report. Artifacts go to `--out`; exit codes are 0 success,
//! 2 precondition failure, 3 verification failure, 4 infeasible.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Status;
use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lorentz-ot", version, about = "Lorentzian optimal transport pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Comma-separated, e.g. `0.19,0.095`.
    #[arg(long, global = true, value_delimiter = ',')]
    tau_schedule: Option<Vec<f64>>,
    /// Regularize even if the plan is not chronological.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write a random instance.
    Gen,
    /// Solve the Kantorovich problem and write the plan and potentials.
    Solve,
    /// Displacement interpolants and curve traces.
    Interpolate,
    /// Regularized potentials across the tau schedule.
    Regularize,
    /// Run the hard checks on the artifacts.
    Verify,
    /// Collect reports into report.json and a summary table.
    Report,
}

const EXIT_PRECONDITION: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

fn run(cli: &Cli) -> Result<Status> {
    let ov = Overrides {
        seed: cli.seed,
        s: cli.s,
        t: cli.t,
        tau_schedule: cli.tau_schedule.clone(),
        force: cli.force,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.command {
        Command::Gen => commands::gen(&cfg, &cli.out),
        Command::Solve => commands::solve(&cfg, &cli.out),
        Command::Interpolate => commands::interpolate(&cfg, &cli.out),
        Command::Regularize => commands::regularize(&cfg, &cli.out),
        Command::Verify => commands::verify(&cfg, &cli.out),
        Command::Report => commands::report(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::VerificationFailed) => ExitCode::from(EXIT_VERIFICATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<lorentz_ot::Error>() {
                Some(lorentz_ot::Error::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
                Some(lorentz_ot::Error::PreconditionChronological { .. }) => ExitCode::from(EXIT_PRECONDITION),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
