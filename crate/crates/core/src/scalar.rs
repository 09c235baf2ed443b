//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + NumAssign + FftNum + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Values a quadrature routine can accumulate: real scalars and complex numbers.
pub trait Quantity<T: Real>:
    Copy
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<T, Output = Self>
    + Debug
{
    fn zero() -> Self;
    fn magnitude(&self) -> T;
}

impl<T: Real> Quantity<T> for T {
    #[inline]
    fn zero() -> Self {
        T::zero()
    }
    #[inline]
    fn magnitude(&self) -> T {
        self.abs()
    }
}

impl<T: Real> Quantity<T> for Complex<T> {
    #[inline]
    fn zero() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    #[inline]
    fn magnitude(&self) -> T {
        self.norm()
    }
}

/// `Complex::new(re, 0)`.
#[inline]
pub fn re<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// ln(n!) by direct summation; exact enough for the photon numbers handled here.
pub fn ln_factorial<T: Real>(n: usize) -> T {
    (2..=n).map(|k| T::from_usize_lossy(k).ln()).sum()
}

pub fn factorial<T: Real>(n: usize) -> T {
    ln_factorial::<T>(n).exp()
}
