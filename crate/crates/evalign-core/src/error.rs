use thiserror::Error;

/// Errors surfaced by the core library.
///
/// The variants map onto the CLI exit codes: `Config` is a usage failure,
/// `Data`/`Dimension`/`Format`/`Io` are input failures, `Numerical` is a
/// runtime numerical failure (NaN loss, non-convergence, undefined metric).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
