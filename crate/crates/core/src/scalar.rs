//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable for box geometry, embeddings and losses.
///
/// Implemented for `f32` and `f64`. Constants are produced through
/// [`Scalar::lit`], which keeps numeric literals readable in generic code.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Subgradient of `|x|`: the sign, with 0 at the kink.
    #[inline]
    fn sign_or_zero(self) -> Self {
        if self > Self::zero() {
            Self::one()
        } else if self < Self::zero() {
            -Self::one()
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_has_zero_subgradient_at_kink() {
        assert_eq!(0.0f64.sign_or_zero(), 0.0);
        assert_eq!((-0.0f64).sign_or_zero(), 0.0);
        assert_eq!(2.5f32.sign_or_zero(), 1.0);
        assert_eq!((-1e-30f64).sign_or_zero(), -1.0);
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f64::from_count(7), 7.0);
        assert_eq!(f64::half() * f64::two(), 1.0);
    }
}
