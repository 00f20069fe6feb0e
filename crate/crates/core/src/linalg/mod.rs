//! Dense linear algebra: matrices, symmetric eigendecomposition, truncated
//! SVD and a mergeable output-statistics accumulator.
//!
//! Weights and activations are `f32`; anything that accumulates (Gram
//! matrices, eigensolves, moments) runs in `f64` and is rounded on the way
//! out.

mod eig;
mod matrix;
mod stats;
mod svd;

pub use eig::{eig_sym, EigFactors};
pub use matrix::{matmul, matmul_tn, Matrix};
pub use stats::{covariance, stats_merge, stats_update, OutputStats};
pub use svd::{svd_truncate, SvdFactors};

pub(crate) use eig::sym_eig_f64;
pub(crate) use matrix::{dgemm, dgemm_tn};
