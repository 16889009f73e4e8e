//! Funnel synthesis command line: solve, refine, verify, and trace
//! invariant-tube certificates from a JSON problem description.

mod bundle;
mod config;
mod run;
mod solution;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::{CliError, Outcome, RunInputs};

#[derive(Parser)]
#[command(name = "funnel", version, about = "invariant funnel synthesis and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the funnel program and verify the result
    Synth(RunArgs),
    /// Solve, then refine between nodes until continuous-time constraints hold
    Scvx(RunArgs),
    /// Re-verify a stored solution against its config
    Verify(SolutionArgs),
    /// Write dense eigenvalue traces for a stored solution
    Trace(SolutionArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem description (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the result bundle
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Conic solver backend
    #[arg(long)]
    backend: Option<String>,
    /// Override the number of dense trace points per interval
    #[arg(long)]
    dense_grid: Option<usize>,
}

#[derive(Args)]
struct SolutionArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Previously written solution.json
    #[arg(long)]
    solution: PathBuf,
}

impl RunArgs {
    fn inputs(&self) -> RunInputs {
        RunInputs {
            config: self.config.clone(),
            out: self.out.clone(),
            seed: self.seed,
            backend: self.backend.clone(),
            dense_grid: self.dense_grid,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(args) => run::run_synth(&args.inputs()),
        Command::Scvx(args) => run::run_scvx(&args.inputs()),
        Command::Verify(args) => run::run_verify(&args.run.inputs(), &args.solution),
        Command::Trace(args) => run::run_trace(&args.run.inputs(), &args.solution),
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(2),
        Err(err) => {
            report(&err);
            ExitCode::FAILURE
        }
    }
}

fn report(err: &CliError) {
    eprintln!("error: {err}");
    let mut source = std::error::Error::source(err);
    while let Some(cause) = source {
        eprintln!("  caused by: {cause}");
        source = cause.source();
    }
}
