use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LssError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("pole of the gamma function at {0}")]
    Pole(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("integral does not converge: {0}")]
    Divergence(String),
    #[error("argument {x} outside the exponential-moment strip ({lo}, {hi})")]
    Strip { x: f64, lo: f64, hi: f64 },
    #[error("measure condition violated: {0}")]
    Measure(String),
    #[error("not a semimartingale: {0}")]
    NotSemimartingale(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("singular kernel value at the origin")]
    Singular,
    #[error("i/o: {0}")]
    Io(String),
    #[error("stage {stage} ({name}): {source}")]
    Stage { stage: usize, name: String, source: Box<LssError> },
}

impl LssError {
    /// True for errors caused by user-supplied configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            LssError::Stage { source, .. } => source.is_config(),
            _ => matches!(self, LssError::InvalidParams(_) | LssError::Domain(_)),
        }
    }

    /// Innermost error, looking through stage labels.
    pub fn root(&self) -> &LssError {
        match self {
            LssError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for LssError {
    fn from(e: std::io::Error) -> Self {
        LssError::Io(e.to_string())
    }
}

impl From<csv::Error> for LssError {
    fn from(e: csv::Error) -> Self {
        LssError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LssError {
    fn from(e: serde_json::Error) -> Self {
        LssError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LssError>;
