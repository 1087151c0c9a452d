//! Dense linear algebra, the box QP solver and seeded random streams.

pub mod linalg;
pub mod matrix;
pub mod qp;
pub mod rng;

pub use linalg::{cholesky_jittered, spd_solve, Cholesky, Lu};
pub use matrix::{dot, mean, norm_inf, sq_dist, std_dev, variance, Matrix};
pub use qp::{box_qp_solve, QpProblem, QpSolution, SumConstraint};
pub use rng::{seeded_rng, RandomStream};
