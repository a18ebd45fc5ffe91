//! Non-negative sparse coding for dictionary learning.
//!
//! Solves `min 0.5 ||Y - DH||_F^2 + lambda ||H||_sum` over `D` in a compact
//! convex set ([`ConstraintSet`](crate::ConstraintSet)) and `H >= 0` by ADMM
//! on a splitting with auxiliary copies `U = D`, `V = H`.

mod admm;
pub mod prox;

pub use admm::{
    admm_init, admm_step, augmented_lagrangian, kkt_residuals, lambda_max, learn, learn_detailed,
    objective, AdmmState, LearnConfig, LearnOutcome,
};
pub use prox::{project_ball2_column, project_box, soft_threshold_nonneg};
