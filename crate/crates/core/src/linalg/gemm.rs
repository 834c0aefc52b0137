//! Row-blocked GEMM over the packed `matrixmultiply` kernels.
//!
//! Each parallel task owns a contiguous block of output rows and runs the
//! same packed kernel on it. Within the kernel the accumulation order of an
//! output element depends only on the `k` blocking, so every element is
//! bitwise identical to the single-call sequential result.

use super::Mat;
use crate::parallel::Exec;
use crate::real::Real;

/// Below this many multiply-adds the split overhead dominates.
const PAR_MIN_FLOPS: usize = 1 << 18;

/// A logical view of a matrix, possibly transposed via strides.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Real> Operand<'a, T> {
    pub(crate) fn normal(m: &'a Mat<T>) -> Self {
        Self {
            data: m.as_slice(),
            rows: m.rows(),
            cols: m.cols(),
            rs: m.cols(),
            cs: 1,
        }
    }

    pub(crate) fn transposed(m: &'a Mat<T>) -> Self {
        Self {
            data: m.as_slice(),
            rows: m.cols(),
            cols: m.rows(),
            rs: 1,
            cs: m.cols(),
        }
    }
}

/// Overwrites `out` with `a · b`. Shapes must already be validated.
pub(crate) fn gemm<T: Real>(exec: Exec, a: Operand<'_, T>, b: Operand<'_, T>, out: &mut Mat<T>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "gemm: inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "gemm: output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        return;
    }

    let threads = crate::parallel::num_threads();
    if exec.is_parallel() && threads > 1 && m > 1 && m * k * n >= PAR_MIN_FLOPS {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let block = m.div_ceil(threads * 4).max(1);
            out.as_mut_slice()
                .par_chunks_mut(block * n)
                .enumerate()
                .for_each(|(bi, chunk)| {
                    let row0 = bi * block;
                    let rows = chunk.len() / n;
                    gemm_rows(a, b, row0, rows, chunk);
                });
            return;
        }
    }
    gemm_rows(a, b, 0, m, out.as_mut_slice());
}

/// Computes rows `row0..row0 + rows` of `a · b` into `dst` (row-major, `n` wide).
fn gemm_rows<T: Real>(a: Operand<'_, T>, b: Operand<'_, T>, row0: usize, rows: usize, dst: &mut [T]) {
    let (k, n) = (a.cols, b.cols);
    debug_assert_eq!(dst.len(), rows * n);
    // Last reachable element of each operand must be in bounds.
    let a_off = row0 * a.rs;
    assert!(a_off + (rows - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    // SAFETY: bounds checked above; `dst` is a distinct mutable slice.
    unsafe {
        T::gemm_raw(
            rows,
            k,
            n,
            a.data.as_ptr().add(a_off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            dst.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
