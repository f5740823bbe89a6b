//! `gptrain`: train Gaussian-process covariance models on time series,
//! estimate their evidence, compare them, and emit predictive curves.
//!
//! Subcommands: `generate`, `fit`, `evidence`, `compare`, `predict`. Every
//! command is deterministic given its inputs, config, and seed (the one
//! exception is the reported wall time). JSON outputs share a versioned
//! envelope described by `schemas/output-v1.json`; files are written
//! atomically (temp file, then rename).
//!
//! Exit codes: 0 success, 2 usage, 3 numeric or optimization failure,
//! 4 evidence refused by the Laplace trust diagnostics (soft failure; the
//! structured warning is still written).

mod commands;
mod config;
mod output;

use clap::Parser;

fn main() {
    let cli = config::Cli::parse();
    match commands::run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("gptrain: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
