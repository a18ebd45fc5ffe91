//! Reconstruction from projection data.
//!
//! The image is written as `x = Pi^T (I kron D) alpha` and the coefficients
//! are found by accelerated proximal gradient ([`solve_main`],
//! [`solve_nnls`], [`solve_l1ball`]). Nonnegative ART ([`solve_art`]) is the
//! dictionary-free baseline. All methods are also reachable by name through
//! [`SolverRegistry`].

mod art;
mod fista;
mod l1ball;
mod problem;
mod registry;

pub use art::{solve_art, Kaczmarz};
pub use fista::{solve_l1ball, solve_main, solve_nnls, ReconConfig, ReconOutput, SolverReport};
pub use l1ball::project_l1_ball;
pub use problem::{ObjectiveParts, ReconProblem};
pub use registry::{
    ArtSolver, L1BallSolver, MainSolver, NnlsSolver, Reconstructor, SolverRegistry, SolverSettings,
};
