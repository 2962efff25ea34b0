//! `cx`: contrastive explanations for classifiers with a linear final
//! layer. Exit codes: 0 success, 1 validation error, 2 numerical failure.

mod args;
mod commands;
mod output;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use output::{read_snapshot, RunSnapshot};

impl Command {
    fn with_out(mut self, out: PathBuf) -> Command {
        match &mut self {
            Command::Train(a) => a.out = out,
            Command::RankFactors(a) => a.out = out,
            Command::RankFoils(a) => a.out = out,
            Command::Inlp(a) => a.out = out,
            Command::AmnesicApply(a) => a.out = out,
            Command::ContrastivePower(a) => a.out = out,
            Command::Prevalence(a) => a.out = out,
            Command::Stain(a) => a.out = out,
            Command::VerifyStain(a) => a.out = out,
            Command::Rerun(_) => {}
        }
        self
    }
}

fn run(cli: Cli) -> cx_core::Result<()> {
    let (command, seed, workers) = match cli.command {
        Command::Rerun(rerun) => {
            let snapshot = read_snapshot(&rerun.snapshot)?;
            (
                snapshot.command.with_out(rerun.out),
                snapshot.seed,
                snapshot.workers,
            )
        }
        cmd => (cmd, cli.seed.unwrap_or(0), cli.workers),
    };
    let snapshot = RunSnapshot {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        workers,
        command: command.clone(),
    };
    cx_core::par::with_workers(workers, || commands::dispatch(&command, seed, &snapshot))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
