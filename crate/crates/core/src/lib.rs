//! Numerical metric regularity for set-valued mappings between Euclidean
//! spaces: modulus estimation, Lyusternik-Graves perturbation bounds,
//! Lipschitz selections of perturbed generalized equations, and
//! applications to smooth mappings and control steering.

pub mod control;
pub mod convexsets;
pub mod error;
pub mod moduli;
pub mod selection;
pub mod smooth;
pub mod spaces;

pub use convexsets::{ConvexSet, TruncatedSet};
pub use error::{Error, Result};
pub use spaces::{LinearOperator, Vector};
