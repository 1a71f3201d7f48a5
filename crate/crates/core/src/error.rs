use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size {tau} is not admissible (must satisfy 0 < tau < {max_step})")]
    StepTooLarge { tau: f64, max_step: f64 },

    #[error("Newton iteration did not converge at step {step} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        step: i64,
        iterations: usize,
        residual: f64,
    },

    #[error("tangent matrix is singular (det = {det:e})")]
    SingularTangentMatrix { det: f64 },

    #[error("direction vector is not unit length (norm = {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("OU path is anchored at index {anchor}; index {index} is not available")]
    BeforeAnchor { index: i64, anchor: i64 },

    #[error("sign of the Lyapunov exponent at b = {b} is ambiguous ({lambda:.4} +/- {std_error:.4}); increase T")]
    SignAmbiguous {
        b: f64,
        lambda: f64,
        std_error: f64,
    },

    #[error("point {point} failed: {source}")]
    PointFailed {
        point: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::SingularTangentMatrix { .. }
            | Error::SignAmbiguous { .. } => true,
            Error::PointFailed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: i64) -> Error {
        match self {
            Error::NonConvergence {
                iterations,
                residual,
                ..
            } => Error::NonConvergence {
                step,
                iterations,
                residual,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
