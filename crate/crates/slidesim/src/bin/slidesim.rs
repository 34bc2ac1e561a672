use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(slidesim::cli::main_with(slidesim::cli::Cli::parse()))
}
