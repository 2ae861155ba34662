//! Scalar abstraction for the numeric core.
//!
//! Everything downstream (tensors, DSP, layers, losses) is generic over
//! [`Real`] so the same code runs in f64 (test suites, gradient oracles)
//! and f32 (cheaper training) without duplication.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar used throughout the crate: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (used for literals and constants).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }

    /// Widen to `f64` for reporting and cross-precision comparisons.
    fn as_f64(self) -> f64;

    /// Largest |z| fed to `exp` inside the sigmoid so that the output
    /// stays strictly inside (0, 1) at this precision.
    fn sigmoid_logit_limit() -> Self;

    /// Byte width when serialized (checkpoint blobs).
    const BYTE_WIDTH: usize;

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }

    fn sigmoid_logit_limit() -> Self {
        // sigmoid(36) = 1 - 2.3e-16 is still < 1.0 in f64
        36.0
    }

    const BYTE_WIDTH: usize = 8;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("need 8 bytes"))
    }
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn sigmoid_logit_limit() -> Self {
        // sigmoid(15) = 1 - 3.1e-7 is still < 1.0 in f32
        15.0
    }

    const BYTE_WIDTH: usize = 4;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("need 4 bytes"))
    }
}

/// Guard below which magnitudes are treated as zero when differentiating
/// `sqrt` and `atan2` (silent spectrogram bins).
pub fn magnitude_floor<R: Real>() -> R {
    R::of(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_limit_keeps_output_strict() {
        let s64 = 1.0 / (1.0 + (-f64::sigmoid_logit_limit()).exp());
        assert!(s64 < 1.0);
        let s32 = 1.0f32 / (1.0f32 + (-f32::sigmoid_logit_limit()).exp());
        assert!(s32 < 1.0);
    }

    #[test]
    fn le_round_trip() {
        let x = -0.12345678912345_f64;
        assert_eq!(f64::from_le_slice(&x.to_le_bytes_vec()), x);
        let y = 7.25_f32;
        assert_eq!(f32::from_le_slice(&y.to_le_bytes_vec()), y);
    }
}
