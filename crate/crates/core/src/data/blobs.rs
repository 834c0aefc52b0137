use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset, Split};
use crate::linalg::Mat;
use crate::real::Real;

/// Isotropic unit-variance Gaussian clusters whose means are pairwise
/// `separation` apart when `num_classes <= d` (scaled basis vectors), or
/// evenly spaced along the first axis otherwise. Samples cycle through the
/// classes.
pub fn gen_blobs<T: Real>(
    seed: u64,
    n_per_class: usize,
    d: usize,
    num_classes: usize,
    separation: f64,
) -> Result<Dataset<T>, DataError> {
    if n_per_class == 0 || d == 0 || num_classes == 0 {
        return Err(DataError::Invalid("blob counts must be >= 1".into()));
    }
    let mean = |c: usize, i: usize| -> f64 {
        if num_classes <= d {
            if i == c {
                separation / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if i == 0 {
            c as f64 * separation
        } else {
            0.0
        }
    };
    let n = n_per_class * num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![0.0f64; d * n];
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = j % num_classes;
        for i in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            cols[j * d + i] = mean(c, i) + z;
        }
        labels.push(c);
    }
    let x = Mat::from_fn(d, n, |i, j| T::lit(cols[j * d + i]));
    Dataset::new(x, labels, num_classes, Split::Train)
}
