//! Small dense-vector kernels shared by the estimators and diagnostics.

use crate::error::{Error, Result};
use crate::scalar::Float;

pub fn check_dim<F: Float>(x: &[F], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(())
}

#[inline]
pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm<F: Float>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// y += alpha * x
#[inline]
pub fn axpy<F: Float>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

#[inline]
pub fn scale<F: Float>(alpha: F, x: &mut [F]) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

pub fn sub<F: Float>(a: &[F], b: &[F]) -> Vec<F> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<F: Float>(a: &[F], b: &[F]) -> Vec<F> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn is_finite<F: Float>(x: &[F]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Maximum absolute componentwise difference.
pub fn max_abs_diff<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut m = F::zero();
    for i in 0..a.len() {
        let d = (a[i] - b[i]).abs();
        if d > m {
            m = d;
        }
    }
    m
}
