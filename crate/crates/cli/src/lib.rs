//! Library side of the `lipcert` command: configuration, checkpoints and the
//! subcommand implementations.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasource;

use std::fmt;

pub use config::{ConfigError, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(lipcert::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for a diverged loss, 4 for shape
    /// mismatches, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(lipcert::Error::DivergedLoss { .. }) => 3,
            CliError::Run(lipcert::Error::ShapeMismatch(_)) => 4,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lipcert::Error> for CliError {
    fn from(e: lipcert::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Caps rayon's worker count from `LIPCERT_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("LIPCERT_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| CliError::Config(format!("LIPCERT_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Config("LIPCERT_THREADS must be positive".into()));
        }
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
