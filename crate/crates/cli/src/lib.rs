//! Command implementations behind the `coherent-usd` binary.

pub mod args;
pub mod commands;
pub mod error;
pub mod figures;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::args::{Cli, Command};
pub use crate::error::RunError;
pub use crate::output::{Artifact, Table};

/// Maps `f` over `items` in parallel; results keep the input order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>, RunError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, RunError> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

pub fn run(cli: &Cli) -> Result<Artifact, RunError> {
    let seed = cli.seed;
    match &cli.command {
        Command::Gram(a) => commands::gram(a, seed),
        Command::Classify(a) => commands::classify(a, seed),
        Command::Design(a) => commands::design_cmd(a, seed),
        Command::Bound(a) => commands::bound(a, seed),
        Command::Capacity(a) => commands::capacity_cmd(a, seed),
        Command::FiniteRate(a) => commands::finite_rate_cmd(a, seed),
        Command::Simulate(a) => commands::simulate_cmd(a, seed),
        Command::Sweep(a) => commands::sweep(a, seed),
        Command::Reproduce(a) => figures::reproduce(a, seed),
    }
}

/// Runs the command and writes its output to `--out` or stdout.
pub fn execute(cli: &Cli) -> Result<(), RunError> {
    let bytes = run(cli)?.render(cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}

/// Where a solver failure's diagnostics go: next to `--out`, else the
/// working directory.
pub fn diagnostics_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".diagnostics.json");
            PathBuf::from(s)
        }
        None => PathBuf::from("coherent-usd-diagnostics.json"),
    }
}
