//! Piecewise-cubic interpolation on uniform grids.

use std::ops::{Add, Mul};

use crate::C64;

/// Cubic Hermite interpolation on `[t_n, t_n + h]` at fraction `s ∈ [0, 1]`
/// from end values `p0`, `p1` and end derivatives `m0`, `m1`. Returns the
/// interpolant and its exact time derivative.
pub fn hermite<T>(p0: &T, m0: &T, p1: &T, m1: &T, h: f64, s: f64) -> (T, T)
where
    for<'a> &'a T: Mul<C64, Output = T>,
    T: Add<Output = T>,
{
    hermite_complex(p0, m0, p1, m1, h, C64::new(s, 0.0))
}

/// [`hermite`] continued to complex `s`.
pub fn hermite_complex<T>(p0: &T, m0: &T, p1: &T, m1: &T, h: f64, s: C64) -> (T, T)
where
    for<'a> &'a T: Mul<C64, Output = T>,
    T: Add<Output = T>,
{
    let one = C64::new(1.0, 0.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let value = p0 * (s3 * 2.0 - s2 * 3.0 + one)
        + m0 * ((s3 - s2 * 2.0 + s) * h)
        + p1 * (s2 * 3.0 - s3 * 2.0)
        + m1 * ((s3 - s2) * h);
    let deriv = p0 * ((s2 * 6.0 - s * 6.0) / h)
        + m0 * (s2 * 3.0 - s * 4.0 + one)
        + p1 * ((s * 6.0 - s2 * 6.0) / h)
        + m1 * (s2 * 3.0 - s * 2.0);
    (value, deriv)
}

/// Locates `t` on a uniform grid of `len` points with spacing `h`,
/// returning the interval index and the fraction within it. Times outside
/// the grid are clamped to the end intervals.
pub fn locate(t: f64, h: f64, len: usize) -> (usize, f64) {
    debug_assert!(len >= 2);
    let x = t / h;
    let n = (x.floor().max(0.0) as usize).min(len - 2);
    let s = (x - n as f64).clamp(0.0, 1.0);
    (n, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CMatrix;

    #[test]
    fn reproduces_cubics_exactly() {
        let f = |t: f64| C64::new(t.powi(3) - 2.0 * t, 0.5 * t * t);
        let df = |t: f64| C64::new(3.0 * t * t - 2.0, t);
        let m = |z: C64| CMatrix::from_element(1, 1, z);
        let (a, b, h) = (0.4, 0.7, 0.3);
        for &s in &[0.0, 0.25, 0.6, 1.0] {
            let (v, d) = hermite(&m(f(a)), &m(df(a)), &m(f(b)), &m(df(b)), h, s);
            let t = a + s * h;
            assert!((v[(0, 0)] - f(t)).norm() < 1e-14);
            assert!((d[(0, 0)] - df(t)).norm() < 1e-13);
        }
    }

    #[test]
    fn locate_clamps() {
        let (n, s) = locate(0.25, 0.1, 11);
        assert_eq!(n, 2);
        assert!((s - 0.5).abs() < 1e-12);
        assert_eq!(locate(-1.0, 0.1, 11).0, 0);
        let (n, s) = locate(5.0, 0.1, 11);
        assert_eq!((n, s), (9, 1.0));
    }
}
