//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All operators, objectives and solvers are written against [`Real`] so they
//! can be instantiated with `f32` or `f64`. The default tolerances of the
//! solvers are tuned for `f64`; running in `f32` requires loosening them.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    /// Converts an index or count into `Self`.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Bit pattern of the value widened to `f64`; widening is exact, so the
    /// map is injective on `Self`.
    #[inline]
    fn cache_bits(self) -> u64 {
        self.to_f64_lossy().to_bits()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Elementwise conversion between scalar types.
pub fn cast_vec<S: Real, T: Real>(v: &[S]) -> Vec<T> {
    v.iter()
        .map(|&s| T::from_f64(s.to_f64_lossy()).unwrap_or_else(T::nan))
        .collect()
}

/// Dense vector kernels on plain slices. None of them check lengths; callers
/// validate dimensions at the public boundary.
pub(crate) mod vecops {
    use super::Real;

    #[inline]
    pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }

    #[inline]
    pub fn norm2<T: Real>(a: &[T]) -> T {
        dot(a, a).sqrt()
    }

    pub fn norm_inf<T: Real>(a: &[T]) -> T {
        a.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    }

    pub fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x + y).collect()
    }

    pub fn scale<T: Real>(s: T, a: &[T]) -> Vec<T> {
        a.iter().map(|&x| s * x).collect()
    }

    /// y += s * x
    #[inline]
    pub fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += s * xi;
        }
    }

    #[cfg(test)]
    pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
    }
}
