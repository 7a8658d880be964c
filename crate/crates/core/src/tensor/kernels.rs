//! Low-level loops shared by the tape operations.

use super::Scalar;

pub(crate) fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not used");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm operand out of bounds: last index {last}, len {len}");
}

/// Row-major `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`.
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    beta: T,
) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c (m x n) += a^T * b` where `a` is stored `k x m` and `b` is `k x n`.
pub(crate) fn matmul_at_b<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, T::one(), c, n as isize, 1);
}

/// `c (m x n) += a * b^T` where `a` is `m x k` and `b` is stored `n x k`.
pub(crate) fn matmul_a_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, T::one(), c, n as isize, 1);
}

/// Geometry of a temporal (K x 1) convolution over a `C x T x N` sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TimeConvGeom {
    pub c_in: usize,
    pub t_in: usize,
    pub joints: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub t_out: usize,
}

impl TimeConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.t_out * self.joints
    }

    /// True when the column buffer would be a verbatim copy of the input.
    pub fn is_identity_layout(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn source_frame(&self, t_out: usize, tap: usize) -> Option<usize> {
        let t = (t_out * self.stride + tap * self.dilation) as isize - self.pad as isize;
        (t >= 0 && (t as usize) < self.t_in).then_some(t as usize)
    }
}

/// Unfold one sample into a `(C*K) x (T'*N)` column matrix.
pub(crate) fn im2col<T: Scalar>(g: &TimeConvGeom, x: &[T], col: &mut [T]) {
    let n = g.joints;
    let cols = g.col_cols();
    for c in 0..g.c_in {
        for k in 0..g.kernel {
            let row = &mut col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            for to in 0..g.t_out {
                let dst = &mut row[to * n..(to + 1) * n];
                match g.source_frame(to, k) {
                    Some(t) => {
                        let src = (c * g.t_in + t) * n;
                        dst.copy_from_slice(&x[src..src + n]);
                    }
                    None => dst.fill(T::zero()),
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto the input.
pub(crate) fn col2im_add<T: Scalar>(g: &TimeConvGeom, col: &[T], dx: &mut [T]) {
    let n = g.joints;
    let cols = g.col_cols();
    for c in 0..g.c_in {
        for k in 0..g.kernel {
            let row = &col[(c * g.kernel + k) * cols..(c * g.kernel + k + 1) * cols];
            for to in 0..g.t_out {
                if let Some(t) = g.source_frame(to, k) {
                    let dst = &mut dx[(c * g.t_in + t) * n..(c * g.t_in + t + 1) * n];
                    for (d, s) in dst.iter_mut().zip(&row[to * n..(to + 1) * n]) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}
