use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric breakdown: {0}")]
    NumericBreakdown(String),

    #[error("regularity failure: {0}")]
    Regularity(String),

    #[error("locality violated: {0}")]
    Locality(String),

    /// Dykstra (or a truncation test) could not produce a point of the set.
    /// `last` is the final iterate and `gap` its largest distance to a member set.
    #[error("infeasibility suspected after {rounds} rounds (gap {gap:e})")]
    InfeasibilitySuspected { last: Vec<f64>, gap: f64, rounds: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("modulus misestimate: {0}")]
    ModulusMisestimate(String),

    #[error("internal invariant failure: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
