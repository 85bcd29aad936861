//! `expconc` command-line front end.

mod bound;
mod certify;
mod experiment;
mod fit;
mod io;
mod solve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use io::CliError;

#[derive(Debug, Parser)]
#[command(name = "expconc", version, about = "Exp-concave composite ERM: certificates, solvers, bounds, experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Numerically check the exp-concavity condition, or estimate the largest β.
    Certify(certify::Args),
    /// Evaluate the closed-form bounds for one n or a list of n.
    Bound(bound::Args),
    /// Minimize the regularized empirical objective on a dataset.
    Solve(solve::Args),
    /// Monte Carlo excess-risk experiment.
    Experiment(experiment::Args),
    /// Log-log least-squares slope of a statistic against n.
    FitRate(fit::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return CliError::Usage(first).report("argv");
        }
    };
    let (name, result) = match cli.command {
        Command::Certify(a) => ("certify", certify::run(a)),
        Command::Bound(a) => ("bound", bound::run(a)),
        Command::Solve(a) => ("solve", solve::run(a)),
        Command::Experiment(a) => ("experiment", experiment::run(a)),
        Command::FitRate(a) => ("fit-rate", fit::run(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(name),
    }
}
