//! `crowdenhance`: oracle-driven enhancement, ablation sweeps and the
//! microtask service.

mod ablate;
mod enhance;
mod output;
mod serve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or unreadable/unwritable files.
    #[error("{0}")]
    Usage(String),
    /// Failure while the algorithm or the server was running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<crowdenhance_core::Error> for CliError {
    fn from(e: crowdenhance_core::Error) -> Self {
        use crowdenhance_core::Error as E;
        match e {
            E::Unreadable { .. }
            | E::Unwritable { .. }
            | E::UnsupportedFormat(_)
            | E::EmptyImage { .. }
            | E::Config(_)
            | E::OutOfRange { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("cannot write CSV: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "crowdenhance", version, about = "Local photo enhancement with per-region sliders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance one photo, answering every slider with an automated quality oracle.
    Enhance(enhance::EnhanceArgs),
    /// Sweep key-pixel counts and selection strategies over a folder of photos.
    Ablate(ablate::AblateArgs),
    /// Run the HTTP microtask service for human workers.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Enhance(args) => enhance::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::Serve(args) => serve::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
