use std::process::ExitCode;

use clap::Parser;
use simattr::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    match cli::run(args) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for line in &outcome.row_errors {
                eprintln!("{line}");
            }
            println!("manifest: {}", outcome.manifest_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
