//! Floating-point abstraction the whole library is generic over.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for all feature, kernel and SVM arithmetic.
///
/// Implemented for `f32` and `f64`. File formats are pinned to little-endian
/// `f64` regardless of the in-memory scalar, so `f32` models round-trip
/// through the widening conversion.
pub trait Real: NdFloat + FromPrimitive + ToPrimitive + std::iter::Sum<Self> {
    /// Converts an `f64` constant into this scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Widens to `f64` (exact for both supported types).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar widens to f64")
    }

    fn two() -> Self {
        Self::of(2.0)
    }

    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}
