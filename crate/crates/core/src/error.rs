use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FafpcaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FafpcaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gram matrix is not positive definite (condition number {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error(
        "subject {subject}: basis cross-product is singular (condition number {condition:.3e}); \
         increase the ridge or reduce the number of interior knots"
    )]
    SingularSubject { subject: String, condition: f64 },

    #[error("requested {requested} components but the matrix has numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("spectrum has no variance")]
    NoVariance,

    #[error("time {time} lies outside the fitted range [{lo}, {hi}]")]
    OutOfRange { time: f64, lo: f64, hi: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate observation for subject {subject:?}, time {time}, var {var:?}")]
    DuplicateObservation {
        subject: String,
        time: f64,
        var: String,
    },

    #[error("subject {subject:?} at time {time} has {found} of {expected} variables")]
    RaggedObservation {
        subject: String,
        time: f64,
        found: usize,
        expected: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FafpcaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FafpcaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            FafpcaError::InvalidArgument(_) => "invalid_argument",
            FafpcaError::DimensionMismatch(_) => "dimension_mismatch",
            FafpcaError::NonFinite(_) => "non_finite",
            FafpcaError::SingularGram { .. } => "singular_gram",
            FafpcaError::SingularSubject { .. } => "singular_subject",
            FafpcaError::RankDeficient { .. } => "rank_deficient",
            FafpcaError::NoVariance => "no_variance",
            FafpcaError::OutOfRange { .. } => "out_of_range",
            FafpcaError::Parse { .. } => "parse",
            FafpcaError::DuplicateObservation { .. } => "duplicate_observation",
            FafpcaError::RaggedObservation { .. } => "ragged_observation",
            FafpcaError::Io { .. } => "io",
            FafpcaError::Csv(_) => "csv",
            FafpcaError::Json(_) => "json",
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::FafpcaError::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
