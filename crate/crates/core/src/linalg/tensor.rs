use super::{LinalgError, Mat};
use crate::parallel::{self, Exec};
use crate::real::Real;

/// A 4-D feature map in `(N, C, H, W)` order, W fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f64> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(LinalgError::InvalidArgument(format!(
                "tensor dimensions must be positive, got ({n}, {c}, {h}, {w})"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(LinalgError::InvalidData {
                rows: n * c,
                cols: h * w,
                len: data.len(),
            });
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self, LinalgError> {
        Self::new(n, c, h, w, vec![T::zero(); n * c * h * w])
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Sample `n` flattened to a `C × (H·W)` matrix.
    pub fn sample_matrix(&self, n: usize) -> Mat<T> {
        let len = self.c * self.h * self.w;
        let slice = &self.data[n * len..(n + 1) * len];
        Mat::from_vec(self.c, self.h * self.w, slice.to_vec()).expect("sample slice has C*H*W entries")
    }
}

/// Per-sample channel Gram matrices `M Mᵀ`, with `M` the `C × (H·W)`
/// flattening of each sample. Returns `N` exactly symmetric `C × C` matrices.
pub fn gram_channels<T: Real>(f: &Tensor4<T>) -> Vec<Mat<T>> {
    gram_channels_with(f, Exec::default())
}

pub fn gram_channels_with<T: Real>(f: &Tensor4<T>, exec: Exec) -> Vec<Mat<T>> {
    let samples: Vec<usize> = (0..f.n).collect();
    parallel::map_ordered(exec, samples, |n| {
        let m = f.sample_matrix(n);
        m.matmul_with(&m.transpose(), Exec::Sequential)
            .expect("M and Mᵀ chain")
            .symmetrize()
    })
}
