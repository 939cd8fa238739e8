use thiserror::Error;

/// Errors produced by the solvers, estimators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("size mismatch: {0}")]
    Mismatch(String),

    #[error("missing law flow: driver depends on the law but no law flow was supplied")]
    MissingLawFlow,

    #[error("excluded rate case: {0}")]
    ExcludedCase(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown preset `{name}`; registered presets: {registered}")]
    UnknownPreset { name: String, registered: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code written to result sidecars.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "E_VALIDATION",
            Error::Mismatch(_) => "E_MISMATCH",
            Error::MissingLawFlow => "E_MISSING_LAW_FLOW",
            Error::ExcludedCase(_) => "E_EXCLUDED_CASE",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::NotConverged(_) => "E_NOT_CONVERGED",
            Error::Parse(_) => "E_PARSE",
            Error::UnknownPreset { .. } => "E_UNKNOWN_PRESET",
            Error::Io(_) => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
