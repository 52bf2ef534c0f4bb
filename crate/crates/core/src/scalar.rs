//! Numeric abstraction shared by the retrieval math and the statistics.
//!
//! Vectors and samples can be held in any IEEE float type. Reductions
//! (dot products, norms, rank sums) always accumulate in `f64` so that
//! rankings and p-values do not depend on the storage precision.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable for embeddings and statistical samples.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Widen to the accumulation type.
    #[inline]
    fn widen(self) -> f64 {
        // Float -> f64 never fails for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Narrow from the accumulation type, saturating to infinity on overflow.
    #[inline]
    fn narrow(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    /// Value as stored on disk.
    #[inline]
    fn to_storage(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }

    #[inline]
    fn from_storage(v: f32) -> Self {
        Self::from_f32(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

/// Dot product of two equal-length slices, accumulated in `f64`.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.widen() * y.widen())
        .sum()
}
