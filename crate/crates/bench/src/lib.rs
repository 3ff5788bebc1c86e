//! Benchmark harness for the block low-rank kernel library: layer-config and
//! hardware-profile parsing, tensor file I/O, the timed runner with built-in
//! oracle checks, CSV reporting, and the `blr` command line front end.

pub mod cli;
pub mod config;
pub mod profile;
pub mod report;
pub mod runner;
pub mod tensor_file;

/// Harness-level failures. Core numeric errors pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {msg}")]
    TensorFile { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] blr_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
