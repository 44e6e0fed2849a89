use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    crawler_cli::main_with(&crawler_cli::Cli::parse())
}
