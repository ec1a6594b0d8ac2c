use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad arguments, out-of-domain indices, invalid primes.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical precondition of the requested computation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The exact computation would exceed the configured size limits.
    #[error("infeasible size: {0}")]
    Infeasible(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Parse { .. } => 2,
            Error::Precondition(_) | Error::Io(_) => 3,
            Error::Infeasible(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Precondition(_) => "precondition",
            Error::Infeasible(_) => "infeasible",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}
