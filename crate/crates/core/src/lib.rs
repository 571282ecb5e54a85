//! Numerical laboratory for grokking in ridge regression.
//!
//! A linear student `N(x; θ) = ⟨θ, φ(x)⟩` is trained with full-batch gradient
//! descent on the ridge objective
//!
//! ```text
//! L_n(θ; λ) = 1/(2n) Σ_i (N(x_i; θ) − N*(x_i))² + (λ/2)‖θ‖²
//! ```
//!
//! and the overfitting time `t₁` (last step with training loss ≥ ε) and the
//! generalization time `t₂` (first step with population loss ≤ c) are detected
//! and compared against closed-form bounds. Two-layer ReLU students are
//! supported for the nonlinear experiments.
//!
//! Loss conventions: the training loss carries the factor 1/2, the population
//! loss `L(θ) = E_x[(N(x; θ) − N*(x))²]` does not. Thresholds are applied to
//! the quantities exactly as defined.

// `!(x > 0.0)` style checks deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod grokking;
pub mod neural;
pub mod numkit;
pub mod problem;
pub mod ridge;

pub use error::{Error, Result};
