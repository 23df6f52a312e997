//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed configuration or arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A variant was assembled without one of its required inputs.
    #[error("{variant} requires {what}")]
    MissingInput { variant: &'static str, what: &'static str },

    /// s, t and the viewer span no volume; the DOP/intensity row matrix is singular.
    #[error("light directions and viewer are coplanar (|det| = {det:.3e})")]
    CoplanarLights { det: f64 },

    /// Per-pixel sinusoid fit could not be carried out.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Reconstruction domain unusable for a single-constant gauge.
    #[error("mask error: {0}")]
    Mask(String),

    /// Two grids that must share a domain do not.
    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    /// Normal equations singular or effectively rank-deficient.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Iteration cap reached without meeting the requested tolerance.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_) | Error::NonConvergence(_) | Error::DegenerateFit(_)
        )
    }
}
