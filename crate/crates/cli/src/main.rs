use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use usd_runner::args::Cli;
use usd_runner::{diagnostics_path, execute, RunError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let RunError::Solver { message, context } = &e {
                let path = diagnostics_path(cli.out.as_deref());
                let body = json!({ "error": message, "context": context, "argv": std::env::args().collect::<Vec<_>>() });
                match std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap_or_default()) {
                    Ok(()) => eprintln!("diagnostics written to {}", path.display()),
                    Err(w) => eprintln!("could not write diagnostics to {}: {w}", path.display()),
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
