use thiserror::Error;

/// Errors raised by the library. The CLI maps `Config`/`InvalidArgument`
/// to exit code 2 and the numerical variants to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("newton did not converge after {iterations} iterations (residual ratio {ratio:.3e})")]
    NewtonFailed { iterations: usize, ratio: f64 },

    #[error("optimizer failed: {reason} after {iterations} iterations")]
    Optimization { reason: String, iterations: usize },

    #[error("sampling stalled: {0}")]
    SamplingStall(String),

    #[error("too many failed samples: {failed} of {attempted}")]
    SampleFailures { failed: usize, attempted: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Dimension(_) | Error::Config(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what}: got {got}, expected {want}")));
    }
    Ok(())
}
