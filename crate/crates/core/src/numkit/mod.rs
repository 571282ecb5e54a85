//! Dense linear algebra and seeded random streams.

mod eigen;
mod linalg;
mod rng;

pub use eigen::{SymEig, smallest_positive_eigenvalue, sym_eig};
pub use linalg::{Mat, axpy, dot, gemm, norm, norm_sq, solve_spd, sub};
pub use rng::{RngStream, derive_seed};

/// Stream selectors, so each random ingredient of an experiment draws from its own stream.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TEACHER: u64 = 4;
    pub const RADEMACHER: u64 = 6;
}

/// Default relative threshold below which an eigenvalue of a Gram matrix counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
