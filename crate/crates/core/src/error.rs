use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical range error: {0}")]
    NumericalRange(String),

    /// A discretization cannot represent the requested mechanism.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error(
        "target delta {delta:e} is not above the infinity mass {infinity_mass:e}; \
         reduce the truncation mass"
    )]
    UnattainableDelta { delta: f64, infinity_mass: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("singular design matrix; collinear covariates: {}", .0.join(", "))]
    SingularDesign(Vec<String>),

    #[error("correlation is undefined for a constant input")]
    UndefinedCorrelation,

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("training diverged at step {step}")]
    Divergence { step: u64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Usage errors are the caller's fault; everything else is a failure of
    /// the computation itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Validation(_) | Error::Io(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
