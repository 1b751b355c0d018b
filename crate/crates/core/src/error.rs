use thiserror::Error;

/// Errors reported by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("accuracy target missed: {what} (achieved {achieved:.3e}, wanted {wanted:.3e})")]
    Accuracy {
        what: String,
        achieved: f64,
        wanted: f64,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("extrapolation outside sampled range: {0}")]
    Extrapolation(String),
    #[error("singular step at index {0}")]
    SingularStep(usize),
    #[error("trajectory left the field domain at t={t:.6}, x={x:.6}")]
    Domain { t: f64, x: f64 },
    #[error("straightening failed: contraction ratio {ratio:.3} at point {point}")]
    Straightening { ratio: f64, point: usize },
    #[error("sequence is not Cauchy: last increment {0:.3e}")]
    NoConvergence(f64),
    #[error("grid mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
