use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(
        "degenerate whitening: retained eigenvalue {index} is {excess:e} above the noise floor"
    )]
    DegenerateWhitening { index: usize, excess: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular system ({0}); try a larger regularization")]
    SingularSystem(String),

    #[error("singular spectrum at grid index {0}")]
    SingularSpectrum(usize),

    #[error("undefined SNR: {0}")]
    UndefinedSnr(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
