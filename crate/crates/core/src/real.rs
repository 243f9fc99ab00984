//! Scalar abstraction so the same network code runs in `f32` (training,
//! checkpoints) and `f64` (gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// General matrix multiply `C = alpha * A * B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// Every element addressed by `(m, k, n)` and the strides must be in bounds
    /// of the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
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

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `y (n x out) = x (n x in) * w^T` where `w` is `out x in` row-major.
/// When `accumulate` is set the product is added to `y`.
pub fn matmul_xwt<T: Real>(x: &[T], w: &[T], n: usize, inp: usize, out: usize, y: &mut [T], accumulate: bool) {
    assert_eq!(x.len(), n * inp);
    assert_eq!(w.len(), out * inp);
    assert_eq!(y.len(), n * out);
    if n == 0 || out == 0 {
        return;
    }
    if inp == 0 {
        if !accumulate {
            y.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: shapes asserted above; strides describe row-major x, transposed w, row-major y.
    unsafe {
        T::gemm_raw(
            n,
            inp,
            out,
            T::one(),
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            beta,
            y.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

/// `dw (out x in) += dy^T (out x n) * x (n x in)`.
pub fn matmul_dyt_x<T: Real>(dy: &[T], x: &[T], n: usize, inp: usize, out: usize, dw: &mut [T]) {
    assert_eq!(dy.len(), n * out);
    assert_eq!(x.len(), n * inp);
    assert_eq!(dw.len(), out * inp);
    if n == 0 || inp == 0 || out == 0 {
        return;
    }
    // SAFETY: shapes asserted above.
    unsafe {
        T::gemm_raw(
            out,
            n,
            inp,
            T::one(),
            dy.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            T::one(),
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// `dx (n x in) = dy (n x out) * w (out x in)`.
pub fn matmul_dy_w<T: Real>(dy: &[T], w: &[T], n: usize, inp: usize, out: usize, dx: &mut [T]) {
    assert_eq!(dy.len(), n * out);
    assert_eq!(w.len(), out * inp);
    assert_eq!(dx.len(), n * inp);
    if n == 0 || inp == 0 {
        return;
    }
    if out == 0 {
        dx.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    // SAFETY: shapes asserted above.
    unsafe {
        T::gemm_raw(
            n,
            out,
            inp,
            T::one(),
            dy.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            T::zero(),
            dx.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// Row-major `C (m x n) = op(A) * op(B)` (+ `C` when `accumulate`), where
/// `op(A)` is `m x k` and `op(B)` is `k x n`. A transposed operand is stored
/// row-major in its untransposed shape (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: buffer lengths asserted above match the logical shapes and strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_xwt(x: &[f64], w: &[f64], n: usize, inp: usize, out: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * out];
        for r in 0..n {
            for o in 0..out {
                y[r * out + o] = (0..inp).map(|i| x[r * inp + i] * w[o * inp + i]).sum();
            }
        }
        y
    }

    #[test]
    fn gemm_wrappers_match_naive_loops() {
        let (n, inp, out) = (5, 7, 3);
        let x: Vec<f64> = (0..n * inp).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..out * inp).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut y = vec![0.0; n * out];
        matmul_xwt(&x, &w, n, inp, out, &mut y, false);
        let expect = naive_xwt(&x, &w, n, inp, out);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let dy: Vec<f64> = (0..n * out).map(|i| (i as f64 * 0.13).sin()).collect();
        let mut dw = vec![0.0; out * inp];
        matmul_dyt_x(&dy, &x, n, inp, out, &mut dw);
        for o in 0..out {
            for i in 0..inp {
                let e: f64 = (0..n).map(|r| dy[r * out + o] * x[r * inp + i]).sum();
                assert!((dw[o * inp + i] - e).abs() < 1e-12);
            }
        }

        let mut dx = vec![0.0; n * inp];
        matmul_dy_w(&dy, &w, n, inp, out, &mut dx);
        for r in 0..n {
            for i in 0..inp {
                let e: f64 = (0..out).map(|o| dy[r * out + o] * w[o * inp + i]).sum();
                assert!((dx[r * inp + i] - e).abs() < 1e-12);
            }
        }
    }
}
