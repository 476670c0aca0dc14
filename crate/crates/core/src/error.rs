use thiserror::Error;

/// Errors raised by the alignment library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (max asymmetry {0:.3e})")]
    NonSkew(f64),

    #[error("matrix is degenerate (det = {0:.3e})")]
    Degenerate(f64),

    #[error("matrix is not a rotation (orthogonality error {orth:.3e}, det {det:.12})")]
    NotRotation { orth: f64, det: f64 },

    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),

    #[error("points are collocated ({0})")]
    Collocated(String),

    #[error("cross product is degenerate for {context} (norm {norm:.3e})")]
    DegenerateCross { context: String, norm: f64 },

    #[error("missing measurement: {0}")]
    MissingMeasurement(String),

    #[error("K matrix spectrum is not distinct (smallest gap {gap:.3e})")]
    DegenerateSpectrum { gap: f64 },

    #[error("gain search failed: best spread {best_spread:.6} exceeds target {target:.6}")]
    SearchFailed { best_spread: f64, target: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("agent {agent} diverged at t = {t}")]
    Diverged { agent: usize, t: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
