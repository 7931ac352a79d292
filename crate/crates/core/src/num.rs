//! Scalar abstractions.
//!
//! Two roles show up in this crate. Coupling constants and energies are
//! [`Scalar`]s: with `J = K = 1` the Hamiltonian only takes integer values, so
//! `i64` gives exact bookkeeping, while `f32`/`f64` cover general couplings.
//! Estimators (moments, skewness, fits) work over a [`Real`].

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, Num, NumCast, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Coupling and energy scalar.
pub trait Scalar:
    Num
    + Copy
    + PartialOrd
    + NumCast
    + ToPrimitive
    + FromPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// True when sums of this type are exact (integers).
    const EXACT: bool;

    /// Agreement test between an incrementally maintained energy and a
    /// from-scratch recomputation. Exact types demand equality.
    fn agrees_with(self, other: Self) -> bool;

    fn from_i64_lossy(v: i64) -> Self {
        <Self as NumCast>::from(v).expect("integer representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

macro_rules! exact_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            const EXACT: bool = true;
            fn agrees_with(self, other: Self) -> bool {
                self == other
            }
        }
    )*};
}

macro_rules! float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            const EXACT: bool = false;
            fn agrees_with(self, other: Self) -> bool {
                let scale = self.abs().max(other.abs()).max(1.0);
                (self - other).abs() <= scale * 1e4 * <$t>::EPSILON
            }
        }
    )*};
}

exact_scalar!(i32, i64);
float_scalar!(f32, f64);

/// Floating-point type used by the estimators.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_scalars_demand_equality() {
        assert!(5i64.agrees_with(5));
        assert!(!5i64.agrees_with(6));
        assert!(1.0f64.agrees_with(1.0 + 1e-14));
        assert!(!1.0f64.agrees_with(1.0 + 1e-6));
    }
}

/// JSON has no NaN: non-finite values are written as `null` and read back
/// as NaN. For fields that may hold an undefined estimate.
pub mod nan_as_null {
    use num_traits::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<F: Float + Serialize, S: Serializer>(v: &F, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, F: Float + Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<F, D::Error> {
        Ok(Option::<F>::deserialize(d)?.unwrap_or_else(F::nan))
    }
}

/// [`nan_as_null`] for every element of a vector.
pub mod nan_as_null_vec {
    use num_traits::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<F: Float + Serialize, S: Serializer>(v: &[F], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<F>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, F: Float + Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Vec<F>, D::Error> {
        Ok(Vec::<Option<F>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or_else(F::nan))
            .collect())
    }
}
