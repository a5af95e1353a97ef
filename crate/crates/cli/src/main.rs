use std::process::ExitCode;

use clap::Parser;

use encode_cli::args::Cli;

fn main() -> ExitCode {
    match encode_cli::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
