//! `evalign` command-line interface.
//!
//! Commands cover the full pipeline: synthetic data generation, teacher
//! pretraining, event-encoder pretraining (with loss ablations),
//! fine-tuning, the evaluation suites, and video event extraction. Every
//! run writes a `run_manifest.json` next to its outputs that is sufficient
//! to reproduce it.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data/format/io error,
//! 4 numerical failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use evalign_core::Error;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Dimension(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = commands::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
