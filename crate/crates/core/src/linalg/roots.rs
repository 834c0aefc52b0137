//! Iterative matrix square roots for SPD matrices.
//!
//! * [`db_sqrt`]: coupled Denman–Beavers iteration, one inverse per iterate.
//! * [`ns_invsqrt`]: coupled Newton–Schulz iteration, matrix products only.
//!
//! Newton–Schulz only converges when the spectrum of its input lies in
//! `(0, 2)`, so the input is divided by its trace first (eigenvalues land in
//! `(0, 1]`) and the result is rescaled by `1/√tr(A)` afterwards.

use super::{inverse, require_square, LinalgError, Mat};
use crate::real::Real;

pub const DB_DEFAULT_MAX_ITERS: usize = 50;
pub const DB_DEFAULT_TOL: f64 = 1e-10;
pub const NS_DEFAULT_ITERS: usize = 20;

/// Residual bound `‖Z·A·Z − I‖_F` below which a solve counts as converged.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Diagnostics of one inverse-square-root solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdSolveReport {
    pub iterations_used: usize,
    /// `‖Z·A·Z − I‖_F` of the returned (de-scaled) inverse root.
    pub residual: f64,
    /// Set only when `residual <= tolerance` (and, for Denman–Beavers, the
    /// step-size criterion was met).
    pub converged: bool,
    pub tolerance: f64,
}

fn residual<T: Real>(a: &Mat<T>, z: &Mat<T>) -> Result<f64, LinalgError> {
    let n = a.rows();
    let zaz = z.matmul(a)?.matmul(z)?;
    Ok(zaz.sub(&Mat::identity(n))?.frobenius_norm().as_f64())
}

/// Denman–Beavers iteration from `Y₀ = A`, `Z₀ = I`:
///
/// `Y ← ½(Y + Z⁻¹)`, `Z ← ½(Z + Y⁻¹)` (both updates use the previous
/// iterates), stopping once `‖Y_{k+1} − Y_k‖_F / ‖Y_k‖_F < tol` or after
/// `max_iters` steps. Returns `(Y ≈ A^(1/2), Z ≈ A^(-1/2), report)`.
pub fn db_sqrt<T: Real>(
    a: &Mat<T>,
    max_iters: usize,
    tol: f64,
) -> Result<(Mat<T>, Mat<T>, SpdSolveReport), LinalgError> {
    let n = require_square(a)?;
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("db_sqrt input"));
    }
    let half = T::lit(0.5);
    let mut y = a.clone();
    let mut z = Mat::identity(n);
    let mut iterations_used = 0;
    let mut step_converged = false;

    for k in 1..=max_iters {
        let z_inv = inverse(&z).map_err(|_| LinalgError::SingularIterate { iteration: k })?;
        let y_inv = inverse(&y).map_err(|_| LinalgError::SingularIterate { iteration: k })?;
        let y_next = y.add(&z_inv)?.scale(half);
        let z_next = z.add(&y_inv)?.scale(half);

        let y_norm = y.frobenius_norm().as_f64();
        let change = y_next.sub(&y)?.frobenius_norm().as_f64() / y_norm;
        y = y_next;
        z = z_next;
        iterations_used = k;
        if change < tol {
            step_converged = true;
            break;
        }
    }

    let y = y.ensure_finite("db_sqrt")?;
    let z = z.ensure_finite("db_sqrt")?;
    let residual = residual(a, &z)?;
    let report = SpdSolveReport {
        iterations_used,
        residual,
        converged: step_converged && residual <= RESIDUAL_TOL,
        tolerance: RESIDUAL_TOL,
    };
    Ok((y, z, report))
}

/// Inverse-free Newton–Schulz iteration for `A^(-1/2)`.
///
/// With `B = A / tr(A)`, `Y₀ = B`, `Z₀ = I`, runs exactly `iters` steps of
/// `T = 3I − Z·Y`, `Y ← ½·Y·T`, `Z ← ½·T·Z`, then returns `Z / √tr(A)`.
pub fn ns_invsqrt<T: Real>(a: &Mat<T>, iters: usize) -> Result<(Mat<T>, SpdSolveReport), LinalgError> {
    let n = require_square(a)?;
    let tr = a.trace();
    if !tr.is_finite() || !a.is_finite() || tr <= T::zero() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    let half = T::lit(0.5);
    let three_i = Mat::identity(n).scale(T::lit(3.0));

    let mut y = a.scale(T::one() / tr);
    let mut z = Mat::identity(n);
    for _ in 0..iters {
        let t = three_i.sub(&z.matmul(&y)?)?;
        y = y.matmul(&t)?.scale(half);
        z = t.matmul(&z)?.scale(half);
    }

    let z = z.scale(T::one() / tr.sqrt()).ensure_finite("ns_invsqrt")?;
    let residual = residual(a, &z)?;
    let report = SpdSolveReport {
        iterations_used: iters,
        residual,
        converged: residual <= RESIDUAL_TOL,
        tolerance: RESIDUAL_TOL,
    };
    Ok((z, report))
}
