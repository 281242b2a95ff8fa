use std::process::ExitCode;

use clap::Parser;
use epimon::cli_io::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
