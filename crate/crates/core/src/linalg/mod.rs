//! Dense matrix arithmetic and the SPD kernels behind the Fisher layer:
//! batch Gram means, damping, and matrix (inverse) square roots.

mod gemm;
mod gram;
mod jacobi;
mod lu;
mod mat;
mod random;
mod roots;
mod tensor;

pub use gram::{damp_spd, gram_mean};
pub use jacobi::{eigh_jacobi, spd_invsqrt_oracle, SymmetricEigen, MAX_JACOBI_SWEEPS};
pub use lu::inverse;
pub use mat::Mat;
pub use random::{log_uniform_spectrum, random_orthogonal, random_spd};
pub use roots::{
    db_sqrt, ns_invsqrt, SpdSolveReport, DB_DEFAULT_MAX_ITERS, DB_DEFAULT_TOL,
    NS_DEFAULT_ITERS, RESIDUAL_TOL,
};
pub use tensor::{gram_channels, gram_channels_with, Tensor4};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    InvalidData { rows: usize, cols: usize, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("not positive-definite")]
    NotPositiveDefinite,
    #[error("singular matrix")]
    Singular,
    #[error("singular iterate at iteration {iteration}")]
    SingularIterate { iteration: usize },
    #[error("Jacobi sweeps did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn require_square<T: crate::Real>(a: &Mat<T>) -> Result<usize, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    Ok(a.rows())
}
