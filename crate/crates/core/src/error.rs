use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("zero variance in {what}")]
    ZeroVariance { what: &'static str },

    #[error("dates have no common element")]
    EmptyIntersection,

    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation rejected: {0}")]
    SimulationRejected(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn ensure_positive(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {x}")))
    }
}
