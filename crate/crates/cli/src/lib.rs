//! Command-line harness: synthetic data, dataset I/O, trace output and
//! benchmark tables for the `sketchyggn` solvers.

pub mod bench;
pub mod commands;
pub mod data;
pub mod error;
pub mod problems;
pub mod trace;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::error::CliError;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_CONVERGENCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sketchyggn", version, about = "Sketch-preconditioned Gauss-Newton training and regression")]
pub struct Cli {
    /// Trace output path (JSON Lines); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write per-iteration CSV here.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, env = "SKETCHYGGN_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a two-layer ReLU network with Gauss-Newton steps.
    Train(commands::TrainArgs),
    /// Solve a Gaussian normal-equation system AᵀA x = y.
    Regress(commands::RegressArgs),
    /// Run Newton's method on a synthetic convex problem.
    Newton(commands::NewtonArgs),
    /// Compute the limiting kernel matrix of a dataset.
    Ntk(commands::NtkArgs),
    /// Time the fast and direct solvers over a size grid.
    Bench(commands::BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Regress(_) => "regress",
            Command::Newton(_) => "newton",
            Command::Ntk(_) => "ntk",
            Command::Bench(_) => "bench",
        }
    }
}

/// Exit code for an error that stopped a run.
pub fn exit_code(err: &CliError) -> i32 {
    use sketchyggn::Error as E;
    match err {
        CliError::Core(E::PreconditionerFailure { .. } | E::Rank(_) | E::Numerical(_) | E::NonPositiveLambda(_)) => {
            EXIT_CONVERGENCE
        }
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed command inside a pool of `cli.threads` workers.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Regress(a) => commands::regress(a),
        Command::Newton(a) => commands::newton(a),
        Command::Ntk(a) => commands::ntk(a),
        Command::Bench(a) => commands::bench(a),
    })
}

fn write_outputs(cli: &Cli, outcome: &Outcome) -> Result<(), CliError> {
    let text = outcome.trace.to_jsonl(outcome.success, &outcome.status)?;
    trace::write_output(cli.out.as_deref(), &text)?;
    if let Some(path) = &cli.csv {
        trace::write_output(Some(path), &outcome.trace.to_csv())?;
    }
    Ok(())
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_SUCCESS };
        }
    };
    let result = execute(&cli).and_then(|outcome| {
        write_outputs(&cli, &outcome)?;
        Ok(outcome.success)
    });
    match result {
        Ok(true) => EXIT_SUCCESS,
        Ok(false) => {
            eprintln!("{}: did not converge", cli.command.name());
            EXIT_CONVERGENCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
