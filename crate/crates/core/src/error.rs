//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, ChbError>;

/// Everything that can go wrong while building or running a simulation.
#[derive(Debug, Error)]
pub enum ChbError {
    /// Invalid user-facing configuration (grid shape, parameter ranges,
    /// incompatible potential/mobility pairs, unknown preset names, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A quantity left the domain on which the material laws are defined,
    /// e.g. a phase value at or beyond the potential's singularities.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural assumption required by the analysis does not hold for
    /// the requested variant, or a solver detected its runtime violation.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// An iterative solver failed to converge; the message carries the
    /// iteration trace needed to diagnose the failure.
    #[error("solver failure: {0}")]
    Solver(String),

    /// The time step was rejected (phase field entered the guard band near
    /// the potential's singularities); the caller may shrink dt and retry.
    #[error("step rejected: {0}")]
    StepRejected(String),

    /// The run cannot continue: the step size already sits at its floor and
    /// the step was still rejected.
    #[error("run aborted: {0}")]
    Aborted(String),

    /// Certification of the separation property failed.
    #[error("certification failure: {0}")]
    Certification(String),

    /// A trajectory does not cover the requested time window.
    #[error("window error: {0}")]
    Window(String),

    /// Snapshot cadence is too coarse for the requested level-set analysis.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// File I/O or serialization problems.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ChbError {
    fn from(e: std::io::Error) -> Self {
        ChbError::Io(e.to_string())
    }
}
