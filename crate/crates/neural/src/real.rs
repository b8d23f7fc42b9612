//! Scalar abstraction so the same layer code runs at 32-bit (training,
//! inference) and 64-bit (gradient checks) precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// Bytes per element in the weight blob.
    const WIDTH: usize;

    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// # Safety
    /// Pointers and strides must describe in-bounds matrices; see [`gemm`].
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const WIDTH: usize = 4;

    fn lit(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const WIDTH: usize = 8;

    fn lit(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `C ← A·B + beta·C` where `A` is `m × k`, `B` is `k × n` and `C` is a
/// row-major `m × n` block with row stride `rsc`. Rows of `A` may overlap,
/// which is how the 1D convolution reads its sliding windows without an
/// explicit im2col copy.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.fits(m, k), "gemm: A out of bounds");
    assert!(b.fits(k, n), "gemm: B out of bounds");
    assert!((m - 1) * rsc + n <= c.len(), "gemm: C out of bounds");
    if k == 0 {
        for row in 0..m {
            for v in &mut c[row * rsc..row * rsc + n] {
                *v = *v * beta;
            }
        }
        return;
    }
    // Vector-matrix and rank-1 shapes are memory bound; the packed kernel
    // only adds copying overhead there.
    if b.col_stride == 1 && (m == 1 || k == 1) {
        for row in 0..m {
            let out = &mut c[row * rsc..row * rsc + n];
            if beta == T::zero() {
                out.fill(T::zero());
            } else if beta != T::one() {
                for v in out.iter_mut() {
                    *v = *v * beta;
                }
            }
            for p in 0..k {
                let s = a.data[row * a.row_stride + p * a.col_stride];
                if s == T::zero() {
                    continue;
                }
                let brow = &b.data[p * b.row_stride..p * b.row_stride + n];
                for (o, &w) in out.iter_mut().zip(brow) {
                    *o += s * w;
                }
            }
        }
        return;
    }
    if m == 1 && b.row_stride == 1 && a.col_stride == 1 {
        let x = &a.data[..k];
        for (o, out) in c[..n].iter_mut().enumerate() {
            let col = &b.data[o * b.col_stride..o * b.col_stride + k];
            let prev = if beta == T::zero() { T::zero() } else { *out * beta };
            *out = prev + dot(x, col);
        }
        return;
    }
    if n == 1 && a.col_stride == 1 && b.row_stride == 1 {
        let y = &b.data[..k];
        for row in 0..m {
            let x = &a.data[row * a.row_stride..row * a.row_stride + k];
            let out = &mut c[row * rsc];
            let prev = if beta == T::zero() { T::zero() } else { *out * beta };
            *out = prev + dot(x, y);
        }
        return;
    }
    // SAFETY: all three operands were bounds-checked above for the given
    // dimensions and strides; C does not alias A or B (distinct borrows).
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize the reduction.
pub fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let tail: T = xs.remainder().iter().zip(ys.remainder()).map(|(&a, &b)| a * b).sum();
    for (cx, cy) in xs.zip(ys) {
        for l in 0..8 {
            acc[l] += cx[l] * cy[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}
