//! Command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::{dump_paths, run, simulate_for_dump};
use crate::report::emit_report;

#[derive(Debug, Parser)]
#[command(name = "localtime-calc", about = "Diffusion local-time experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment described by a JSON config and write a CSV report.
    Run {
        /// Path to the JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also dump the forward path ensemble next to the report.
        #[arg(long, default_value_t = false)]
        dump_paths: bool,
    },
}

/// Executes the parsed command. Returns the process exit code:
/// 0 all checks passed, 1 at least one row-level check failed.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            dump_paths: dump,
        } => {
            if let Some(threads) = threads {
                // ignore failure if a global pool already exists (tests)
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
            let cfg = ExperimentConfig::load(&config)?;
            let rows = run(&cfg)?;
            emit_report(&rows, &out)?;
            if dump {
                let paths = simulate_for_dump(&cfg)?;
                dump_paths(&paths, &out.with_extension("paths.csv"))?;
            }
            Ok(if rows.iter().all(|r| r.pass) { 0 } else { 1 })
        }
    }
}

/// Map an error onto the documented exit codes: 2 for configuration
/// problems, 3 for runtime failures.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Domain(_) => 2,
        _ => 3,
    }
}
