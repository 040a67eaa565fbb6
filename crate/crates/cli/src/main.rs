use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = scol_cli::Cli::parse();
    match scol_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
