use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown exercise {0}")]
    UnknownExercise(u32),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank-deficient regression basis: {0}")]
    RankDeficientBasis(String),

    #[error("could not decorrelate design column {column} from the sample sizes after {attempts} permutations")]
    Decorrelation { column: usize, attempts: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("at design point q={q}: {source}")]
    AtDesignPoint {
        q: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::UnknownModel(_)
            | Error::UnknownExercise(_)
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. } => true,
            Error::AtDesignPoint { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::RankDeficientBasis(_)
            | Error::Decorrelation { .. }
            | Error::Numerical(_) => true,
            Error::AtDesignPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
