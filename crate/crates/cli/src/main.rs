mod args;
mod commands;
mod run_dir;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// Failure of one invocation, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, settings or config file: exit 1.
    Usage(String),
    /// Unreadable or inconsistent data: exit 2; non-finite numerics: exit 3.
    Data(segcrf::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(segcrf::Error::NonFinite(_)) => 3,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<segcrf::Error> for CliError {
    fn from(e: segcrf::Error) -> Self {
        CliError::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
