use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("connection matrix support does not match the shift operator at ({row}, {col})")]
    SupportMismatch { row: usize, col: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear system is singular")]
    Singular,

    #[error("infeasible broadcast range: {0}")]
    InfeasibleBroadcastRange(String),

    #[error("coefficient mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("non-termination guard hit after {0} slots")]
    SlotLimit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SupportMismatch { .. } => "support_mismatch",
            Error::Numerical(_) => "numerical",
            Error::Singular => "singular",
            Error::InfeasibleBroadcastRange(_) => "infeasible_broadcast_range",
            Error::ModeMismatch(_) => "mode_mismatch",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::SlotLimit(_) => "slot_limit",
            Error::Io(_) => "io",
        }
    }
}
