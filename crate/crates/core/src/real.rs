use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point scalar the pose machinery is generic over: `f32` or `f64`.
pub trait Real: RealField + Copy + ToPrimitive {
    /// Converts an `f64` literal or computed value into `Self`.
    fn lit(x: f64) -> Self;

    /// Widens to `f64`, used for reporting and integer-indexed pixel math.
    fn as_f64(self) -> f64;

    /// Largest finite value.
    fn max_value() -> Self;
}

impl Real for f64 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn max_value() -> Self {
        f64::MAX
    }
}

impl Real for f32 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn max_value() -> Self {
        f32::MAX
    }
}
