//! Crate-wide error type.

/// Errors produced by the simulation laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the operation's domain (bad index, mismatched
    /// dimensions, parameter out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed (non-finite values, input too far from
    /// the admissible set, iteration diverged).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A plane-index sequence was exhausted before a schedule could mark all
    /// N planes.
    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),

    /// The Newton solver's Jacobian lost rank. Reported distinctly from
    /// plain non-convergence so callers can tell the two failure modes apart.
    #[error("singular Jacobian: smallest singular value {sigma_min:.3e}")]
    SingularJacobian { sigma_min: f64 },

    /// The coalescence engine exceeded its retry budget.
    #[error("coupling numerics exhausted after {attempts} attempts: {details}")]
    CouplingExhausted { attempts: usize, details: String },

    /// A Gram matrix lost rank while computing a volume factor.
    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),
}

pub type Result<T> = std::result::Result<T, Error>;
