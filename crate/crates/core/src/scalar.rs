//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All linear algebra is written against [`Real`], so the same code runs in
//! `f32` and `f64`. Complex quantities use `nalgebra::Complex<T>`.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use nalgebra::Complex;

/// Real floating-point scalar usable throughout the crate.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal or measured quantity into this scalar.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn machine_epsilon() -> Self {
        Self::default_epsilon()
    }

    /// A tolerance of `base`, raised to a small multiple of machine epsilon
    /// when the scalar type cannot resolve `base` (e.g. `1e-10` in `f32`).
    fn tol(base: f64) -> Self {
        let floor = Self::machine_epsilon() * Self::lit(64.0);
        let base = Self::lit(base);
        if base > floor {
            base
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
