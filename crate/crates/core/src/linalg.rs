//! Small dense complex-vector and matrix helpers.
//!
//! Inner products follow the physics convention `<a, b> = a^H b`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `a^H b`.
#[inline]
pub fn inner<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Complex::new(T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        // conj(x) * y
        acc.re += x.re * y.re + x.im * y.im;
        acc.im += x.re * y.im - x.im * y.re;
    }
    acc
}

#[inline]
pub fn norm_sqr<T: Scalar>(a: &[Complex<T>]) -> T {
    a.iter().map(|z| z.norm_sqr()).sum()
}

#[inline]
pub fn norm<T: Scalar>(a: &[Complex<T>]) -> T {
    norm_sqr(a).sqrt()
}

/// Returns `a / ||a||`, rejecting the zero vector.
pub fn normalized<T: Scalar>(a: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let n = norm(a);
    if !(n > T::zero()) {
        return Err(Error::domain("cannot normalize a zero-norm vector"));
    }
    Ok(a.iter().map(|z| z / n).collect())
}

/// Solves `A X = B` for Hermitian positive-definite `A` (n x n, row-major) and
/// `B` (n x m, row-major) by Cholesky factorization.
pub fn solve_hpd<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], n: usize, m: usize) -> Result<Vec<Complex<T>>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * m);
    // Lower factor L with A = L L^H.
    let mut l = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k].conj();
            }
            if i == j {
                let d = sum.re;
                if !(d > T::zero()) {
                    return Err(Error::domain("matrix is not positive definite"));
                }
                l[i * n + i] = Complex::new(d.sqrt(), T::zero());
            } else {
                l[i * n + j] = sum / l[j * n + j].re;
            }
        }
    }
    let mut x = b.to_vec();
    for col in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i * m + col];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i].re;
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = x[i * m + col];
            for k in i + 1..n {
                s -= l[k * n + i].conj() * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i].re;
        }
    }
    Ok(x)
}
