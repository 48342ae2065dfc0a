//! Floating-point scalar abstraction shared by the numerical core.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Real scalar the linear algebra, privatizer and learners are written against.
///
/// Implemented for `f32` and `f64`. Sampling helpers live here so generic code
/// does not have to carry `rand_distr` bounds around.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot
    /// represent at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Draw from N(0, 1).
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from Beta(a, b). Returns `None` if the parameters are not positive.
    fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Option<Self>;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Option<Self> {
                Beta::new(a, b).ok().map(|dist| dist.sample(rng))
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
