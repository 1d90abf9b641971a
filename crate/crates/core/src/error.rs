use thiserror::Error;

/// Errors produced by the unmixing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate covariance")]
    DegenerateCovariance,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("combination explosion: {count} combinations exceed the cap of {cap}")]
    CombinationExplosion { count: usize, cap: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no pure pixels for endmember {endmember}")]
    NoPurePixels { endmember: usize },

    #[error("singular system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: header says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    /// True for failures of the numerical kernels (as opposed to bad input files).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::DegenerateCovariance
                | Error::CombinationExplosion { .. }
                | Error::InsufficientData(_)
                | Error::NoPurePixels { .. }
                | Error::SingularSystem { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
