use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use decon_cli::args::Cli;
use decon_cli::failure::Kind;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Kind::Usage.code()),
            };
        }
    };
    match decon_cli::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.kind.code())
        }
    }
}
