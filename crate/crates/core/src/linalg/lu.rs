use super::{require_square, LinalgError, Mat};
use crate::real::Real;

/// Matrix inverse by Gauss–Jordan elimination with partial pivoting.
///
/// Fails with `Singular` when a pivot vanishes relative to the matrix scale.
pub fn inverse<T: Real>(a: &Mat<T>) -> Result<Mat<T>, LinalgError> {
    let n = require_square(a)?;
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("inverse input"));
    }
    let scale = a.max_abs();
    if n == 0 {
        return Ok(a.clone());
    }
    if scale == T::zero() {
        return Err(LinalgError::Singular);
    }
    let tiny = scale * T::epsilon() * T::lit(n as f64);

    let mut m = a.clone();
    let mut inv = Mat::identity(n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .expect("non-empty range");
        let pivot = m[(pivot_row, col)];
        if pivot.is_nan() || pivot.abs() <= tiny {
            return Err(LinalgError::Singular);
        }
        if pivot_row != col {
            swap_rows(&mut m, pivot_row, col);
            swap_rows(&mut inv, pivot_row, col);
        }
        let inv_pivot = T::one() / pivot;
        m.row_mut(col).iter_mut().for_each(|v| *v = *v * inv_pivot);
        inv.row_mut(col).iter_mut().for_each(|v| *v = *v * inv_pivot);

        let pivot_m = m.row(col).to_vec();
        let pivot_inv = inv.row(col).to_vec();
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = m[(r, col)];
            if factor == T::zero() {
                continue;
            }
            for (v, &p) in m.row_mut(r).iter_mut().zip(&pivot_m) {
                *v = *v - factor * p;
            }
            for (v, &p) in inv.row_mut(r).iter_mut().zip(&pivot_inv) {
                *v = *v - factor * p;
            }
        }
    }
    inv.ensure_finite("inverse")
}

fn swap_rows<T: Real>(m: &mut Mat<T>, a: usize, b: usize) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for j in 0..cols {
        data.swap(a * cols + j, b * cols + j);
    }
}
