//! Measured quantities of a run and the convergence-bound evaluator.

mod bound;
mod estimators;
mod overhead;

pub use bound::{
    c_u, evaluate_bound, learning_rate_guard, BoundBreakdown, BoundInputs, BoundReport, LrGuard, RoundBoundInputs,
};
pub use estimators::{
    dissimilarity, estimate_beta, estimate_beta_with, estimate_sigma2, masked_global_grad_norm_sq, measure_shift,
};
pub use overhead::{compute_overheads, first_order_dominates, local_compute_units, ComputeRule, EmpiricalCdf};
