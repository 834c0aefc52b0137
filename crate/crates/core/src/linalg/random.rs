use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Mat;
use crate::real::Real;

/// Haar-ish random orthogonal matrix: modified Gram–Schmidt on a Gaussian
/// matrix (columns orthonormalized in order).
pub fn random_orthogonal<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<T> {
    loop {
        let mut q: Mat<f64> = Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        let mut ok = true;
        for j in 0..n {
            for p in 0..j {
                let dot: f64 = (0..n).map(|i| q[(i, p)] * q[(i, j)]).sum();
                for i in 0..n {
                    q[(i, j)] -= dot * q[(i, p)];
                }
            }
            let norm = (0..n).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for i in 0..n {
                q[(i, j)] /= norm;
            }
        }
        if ok {
            return q.cast();
        }
    }
}

/// `Q · diag(eigenvalues) · Qᵀ` with a random orthogonal `Q`, symmetrized.
pub fn random_spd<T: Real, R: Rng + ?Sized>(eigenvalues: &[f64], rng: &mut R) -> Mat<T> {
    let n = eigenvalues.len();
    let q: Mat<f64> = random_orthogonal(n, rng);
    let scaled = Mat::from_fn(n, n, |i, j| q[(i, j)] * eigenvalues[j]);
    scaled.matmul_t(&q).expect("square").symmetrize().cast()
}

/// Eigenvalues spanning exactly `[1, condition]`: the two ends plus
/// log-uniform interior values.
pub fn log_uniform_spectrum<R: Rng + ?Sized>(n: usize, condition: f64, rng: &mut R) -> Vec<f64> {
    let top = condition.ln();
    (0..n)
        .map(|i| match i {
            0 => 1.0,
            1 => condition,
            _ => (rng.random::<f64>() * top).exp(),
        })
        .collect()
}
