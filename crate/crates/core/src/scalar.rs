//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the pipeline is generic over: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Small fixed-size vector helpers for 3D geometry.
pub mod vec3 {
    use super::Real;

    pub type Vec3<T> = [T; 3];

    #[inline]
    pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    #[inline]
    pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    #[inline]
    pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn norm<T: Real>(a: Vec3<T>) -> T {
        dot(a, a).sqrt()
    }

    #[inline]
    pub fn dist<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
        norm(sub(a, b))
    }

    /// Unit vector along `a`, or `None` for a zero vector.
    #[inline]
    pub fn normalize<T: Real>(a: Vec3<T>) -> Option<Vec3<T>> {
        let n = norm(a);
        if n > T::zero() && n.is_finite() {
            Some(scale(a, T::one() / n))
        } else {
            None
        }
    }
}
