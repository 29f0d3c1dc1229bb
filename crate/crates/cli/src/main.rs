//! `gram-edge`: reproducible drivers for critical values, rank detection,
//! size/power experiments, edge computations and coupling checks.
//!
//! Every command prints one JSON document on stdout carrying
//! `"schema": 1` and a `metadata` block with the command, its arguments, the
//! seed and the crate version. Progress goes to stderr.
//!
//! Exit codes: 0 success, 2 invalid arguments or input, 3 runtime failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.error);
            ExitCode::from(e.code)
        }
    }
}
