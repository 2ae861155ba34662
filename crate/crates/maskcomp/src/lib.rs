//! Parallel-path monaural speech enhancement.
//!
//! A noisy 16 kHz waveform is mapped to the time-frequency domain, run
//! through a feature-extraction front end feeding two parallel paths —
//! a magnitude-domain mask estimator and a complex-domain enhancement
//! path — and the two are fused by a closed-form compensation block
//! before synthesis back to a waveform. Training minimizes a joint
//! spectral-MAE plus negative SI-SDR objective end to end through a
//! self-contained reverse-mode autodiff substrate.
//!
//! The numeric core is generic over the scalar type ([`num::Real`]):
//! `f64` for the test suites and gradient oracles, `f32` available for
//! cheaper training. Concrete aliases live at the crate root.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod dsp;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod trainer;
pub mod num;

pub use num::Real;

/// 64-bit tape (test suites, gradient oracles, default CLI precision).
pub type Tape64 = autodiff::Tape<f64>;
/// 32-bit tape (cheaper training).
pub type Tape32 = autodiff::Tape<f32>;
