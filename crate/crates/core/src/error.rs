use thiserror::Error;

/// Errors raised by the fitting, selection and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column {0} has zero variance")]
    ConstantColumn(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column {0} is numerically in the span of the active columns")]
    SingularGram(usize),

    #[error("active set is empty")]
    EmptyActiveSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coordinate descent did not converge at lambda = {lambda}")]
    NoConvergence { lambda: f64 },

    #[error("equiangular direction is degenerate at knot {0}")]
    DegenerateDirection(usize),

    #[error("design is not orthonormal (max |X'X - I| = {0:.3e})")]
    NonOrthogonalDesign(f64),

    #[error("epsilon schedule exhausted at step {0} without a usable step size")]
    ScheduleExhausted(usize),

    #[error("response is not binary (row {0})")]
    NonBinaryResponse(usize),

    #[error("weighted Gram matrix is numerically singular")]
    IrlsSingular,

    #[error("fold too small: {0}")]
    FoldTooSmall(String),

    #[error("observed response violates selection row {row} by {violation:.3e}")]
    InfeasibleEvent { row: usize, violation: f64 },

    #[error("signal-to-noise ratio undefined: beta' Sigma beta = 0")]
    SnrUndefined,

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("column '{0}' not found")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column '{col}'")]
    NonNumericCell { row: usize, col: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split leaves an empty or degenerate partition ({0})")]
    SplitTooSmall(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures caused by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularGram(_)
                | Error::NoConvergence { .. }
                | Error::DegenerateDirection(_)
                | Error::ScheduleExhausted(_)
                | Error::IrlsSingular
                | Error::InfeasibleEvent { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
