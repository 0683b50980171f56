use std::process::ExitCode;

use clap::Parser;
use fibergan::cli::{self, Cli};

fn main() -> ExitCode {
    let parsed = Cli::parse();
    let result = cli::configure_threads().and_then(|()| cli::run(parsed));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
