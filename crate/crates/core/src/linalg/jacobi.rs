//! Cyclic Jacobi eigendecomposition for symmetric matrices.
//!
//! Slow (O(n³) per sweep) but simple and unconditionally accurate, which is
//! what a reference oracle needs.

use super::{require_square, LinalgError, Mat};
use crate::real::Real;

pub const MAX_JACOBI_SWEEPS: usize = 100;

/// `A = Q · diag(values) · Qᵀ`, eigenvectors stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T = f64> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
    pub sweeps: usize,
}

impl<T: Real> SymmetricEigen<T> {
    /// `Q · diag(f(λ)) · Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(T) -> T) -> Mat<T> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            let row = scaled.row_mut(i);
            for (v, &lambda) in row.iter_mut().zip(&self.values) {
                *v = *v * f(lambda);
            }
        }
        scaled
            .matmul_t(&self.vectors)
            .expect("Q is square")
            .symmetrize()
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.map_spectrum(|l| l)
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Only the upper triangle is trusted; the input is symmetrized first.
pub fn eigh_jacobi<T: Real>(a: &Mat<T>) -> Result<SymmetricEigen<T>, LinalgError> {
    let n = require_square(a)?;
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("eigh_jacobi input"));
    }
    let mut m = a.symmetrize();
    let mut q = Mat::identity(n);
    let frob = m.frobenius_norm();
    let hundred = T::lit(100.0);

    let mut sweeps = 0;
    loop {
        let off: T = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off == T::zero() || off.sqrt() <= frob * T::epsilon() * T::lit(1e-3) {
            break;
        }
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;

        for p in 0..n {
            for r in (p + 1)..n {
                let apq = m[(p, r)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(r, r)];
                let g = hundred * apq.abs();
                // Negligible next to both diagonal entries: drop it.
                if sweeps > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[(p, r)] = T::zero();
                    m[(r, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (T::lit(2.0) * theta)
                } else {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate_columns(&mut m, p, r, c, s);
                rotate_rows(&mut m, p, r, c, s);
                m[(p, r)] = T::zero();
                m[(r, p)] = T::zero();
                rotate_columns(&mut q, p, r, c, s);
            }
        }
    }

    let values = (0..n).map(|i| m[(i, i)]).collect();
    let vectors = q.ensure_finite("eigh_jacobi")?;
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

fn rotate_columns<T: Real>(m: &mut Mat<T>, p: usize, q: usize, c: T, s: T) {
    for k in 0..m.rows() {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
}

fn rotate_rows<T: Real>(m: &mut Mat<T>, p: usize, q: usize, c: T, s: T) {
    for k in 0..m.cols() {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
}

/// Reference `A^(-1/2)` via eigendecomposition: `Q Λ^(-1/2) Qᵀ`.
pub fn spd_invsqrt_oracle<T: Real>(a: &Mat<T>) -> Result<Mat<T>, LinalgError> {
    let eig = eigh_jacobi(a)?;
    if eig.min_value().is_nan() || eig.min_value() <= T::zero() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    eig.map_spectrum(|l| T::one() / l.sqrt())
        .ensure_finite("spd_invsqrt_oracle")
}
