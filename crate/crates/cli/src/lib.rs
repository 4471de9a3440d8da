//! The `m2d` command-line pipeline: generate data, train a classifier,
//! convert it into a detector, evaluate against baselines and score inputs.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use commands::Cli;
use config::ConfigError;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status when a stage fails at run time.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit status for bad configuration or usage.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(m2d_core::Error),
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Runtime(m2d_core::Error::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(m2d_core::Error::InvalidConfig(m)) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<m2d_core::Error> for CliError {
    fn from(e: m2d_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match commands::dispatch(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
