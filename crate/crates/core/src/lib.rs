//! Truncated singular value decomposition for sparse and dense matrices.
//!
//! The solver runs Lanczos bidiagonalization with full reorthogonalization
//! and augmented restarting, controls accuracy through a cheap per-triplet
//! residual, and keeps its workspace preallocated across restarts. A
//! one-sided Jacobi SVD handles the small projected matrix and doubles as a
//! brute-force reference for testing.

pub mod dense_svd;
pub mod error;
pub mod io;
pub mod kernels;
pub mod lanczos;
pub mod matgen;
pub mod solver;

pub use dense_svd::{svd_full, SmallSvd};
pub use error::SvdsError;
pub use io::{read_matrix_market, write_matrix_market, MatrixData, ResultDocument, ResultFormat};
pub use kernels::{CsrMatrix, DenseMatrix, MatVec};
pub use lanczos::LanczosState;
pub use solver::{estimate_flops, truncated_svd, FlopBreakdown, FlopModel, SvdsOptions, SvdsResult};
