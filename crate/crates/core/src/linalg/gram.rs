use super::{require_square, LinalgError, Mat};
use crate::real::Real;

/// Mean outer product of the batch columns: `(1/B) · Σ_b x_b x_bᵀ`.
///
/// `x` is `d × B` with one sample per column. The result is exactly
/// symmetric.
pub fn gram_mean<T: Real>(x: &Mat<T>) -> Result<Mat<T>, LinalgError> {
    let batch = x.cols();
    if batch == 0 {
        return Err(LinalgError::EmptyBatch);
    }
    let inv_b = T::one() / T::lit(batch as f64);
    x.matmul_t(x)?
        .scale(inv_b)
        .symmetrize()
        .ensure_finite("gram_mean")
}

/// Symmetry tolerance used by [`damp_spd`], relative to the largest entry.
fn symmetry_tol<T: Real>(g: &Mat<T>) -> f64 {
    let floor = 1e-10f64.max(10.0 * T::epsilon().as_f64());
    floor * g.max_abs().as_f64().max(1.0)
}

/// Returns `G + (eps_rel · tr(G)/d + floor_abs) · I`.
///
/// The shift is scale-aware through the mean eigenvalue `tr(G)/d` and never
/// smaller than `floor_abs`. Both parameters must be nonnegative and at least
/// one of them positive.
pub fn damp_spd<T: Real>(g: &Mat<T>, eps_rel: f64, floor_abs: f64) -> Result<Mat<T>, LinalgError> {
    let d = require_square(g)?;
    if !(eps_rel >= 0.0 && floor_abs >= 0.0) || !eps_rel.is_finite() || !floor_abs.is_finite() {
        return Err(LinalgError::InvalidArgument(format!(
            "damping parameters must be finite and nonnegative (eps_rel={eps_rel}, floor_abs={floor_abs})"
        )));
    }
    if eps_rel == 0.0 && floor_abs == 0.0 {
        return Err(LinalgError::InvalidArgument(
            "zero damping: eps_rel and floor_abs are both 0".into(),
        ));
    }
    if d == 0 {
        return Ok(g.clone());
    }
    let asym = g.asymmetry().as_f64();
    if asym > symmetry_tol(g) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let mean_eig = g.trace() / T::lit(d as f64);
    let shift = T::lit(eps_rel) * mean_eig + T::lit(floor_abs);
    g.add_diagonal(shift).ensure_finite("damp_spd")
}
