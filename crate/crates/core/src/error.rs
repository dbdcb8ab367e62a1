use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite value in {what} at layer {layer}")]
    NonFinite { what: &'static str, layer: usize },

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config field `{field}`: {msg}")]
    ConfigField { field: String, msg: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("all grid points diverged")]
    AllDiverged,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ConfigParse { .. }
                | Error::ConfigField { .. }
                | Error::Arch(_)
                | Error::Invalid(_)
                | Error::Shape { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
