//! Entropy-regularized optimal transport between text tokens and visual
//! patches.
//!
//! The solver minimizes `⟨T, C⟩ − λ H(T)` over couplings with marginals
//! `a` and `b`, where `H(T) = −Σ t log t`. The log-domain iteration is the
//! default; the scaling (linear-domain) iteration follows the same update
//! schedule so the two can be compared elementwise.

mod cost;
mod fusion;
mod sinkhorn;

pub use cost::{cost_matrix, CostMatrix};
pub use fusion::{fuse, FusionOutput};
pub use sinkhorn::{
    plan_entropy, saliency_marginal, sinkhorn, transport_cost, uniform_marginal, SinkhornConfig,
    TransportPlan,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("zero-norm {side} vector at index {index}")]
    ZeroNormVector { side: &'static str, index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("linear-domain scaling underflowed at iteration {iteration}; retry in the log domain")]
    NumericalUnderflow { iteration: usize },
    #[error("plan did not converge (marginal violation {violation:.3e} after {iterations} iterations)")]
    NotConverged { iterations: usize, violation: f64 },
}
