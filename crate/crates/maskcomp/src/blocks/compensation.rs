//! Compensation block: closed-form fusion of the mask and complex
//! paths. The refined spectrum is decoupled into magnitude and phase,
//! the magnitude is gated by the mask, and the gated component is added
//! back onto the real/imaginary parts:
//!
//! ```text
//!   Mag   = sqrt(R^2 + I^2)        theta = angle of (R + jI)
//!   Smag  = Mag * mask
//!   Comp_r = Smag * cos(theta)     Comp_i = Smag * sin(theta)
//!   R'    = R + Comp_r             I'    = I + Comp_i
//! ```
//!
//! With theta the angle of `R + jI`, `Smag cos(theta)` collapses to
//! `mask * R` (and likewise for the imaginary part) — including at
//! silent bins, where both sides are zero. The block is computed in
//! that collapsed form, which makes the mask = 0 passthrough and the
//! mask = 1 doubling bit-exact and keeps the whole thing differentiable
//! with no special casing at zero magnitude.

use crate::autodiff::{Tape, TensorId};
use crate::dsp::ComplexSpectrogram;
use crate::num::Real;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CompensationError {
    #[error("mask is {mask_len} values for a {frames} x {bins} spectrum")]
    MaskShape { mask_len: usize, frames: usize, bins: usize },
}

/// All intermediate quantities of one compensation pass.
#[derive(Debug, Clone)]
pub struct CompensationResult<R: Real> {
    pub frames: usize,
    pub bins: usize,
    /// Masked magnitude, `Mag * mask`.
    pub smag: Vec<R>,
    pub comp_r: Vec<R>,
    pub comp_i: Vec<R>,
    pub r_out: Vec<R>,
    pub i_out: Vec<R>,
}

/// Plain-value compensation over a spectrogram.
pub fn compensate<R: Real>(
    prev: &ComplexSpectrogram<R>,
    mask: &[R],
) -> Result<CompensationResult<R>, CompensationError> {
    let n = prev.frames * prev.bins;
    if mask.len() != n {
        return Err(CompensationError::MaskShape {
            mask_len: mask.len(),
            frames: prev.frames,
            bins: prev.bins,
        });
    }
    let mut smag = vec![R::zero(); n];
    let mut comp_r = vec![R::zero(); n];
    let mut comp_i = vec![R::zero(); n];
    let mut r_out = vec![R::zero(); n];
    let mut i_out = vec![R::zero(); n];
    for i in 0..n {
        let re = prev.data[2 * i];
        let im = prev.data[2 * i + 1];
        let mag = (re * re + im * im).sqrt();
        smag[i] = mag * mask[i];
        comp_r[i] = mask[i] * re;
        comp_i[i] = mask[i] * im;
        r_out[i] = re + comp_r[i];
        i_out[i] = im + comp_i[i];
    }
    Ok(CompensationResult { frames: prev.frames, bins: prev.bins, smag, comp_r, comp_i, r_out, i_out })
}

/// Tape version: `prev` is `[T, F, 2]`, `mask` is `[T, F]`; returns the
/// compensated `[T, F, 2]` spectrum.
pub fn compensate_graph<R: Real>(
    tape: &mut Tape<R>,
    prev: TensorId,
    mask: TensorId,
) -> TensorId {
    let shape = tape.shape(prev).to_vec();
    assert_eq!(shape.len(), 3, "compensation input must be [T, F, 2]");
    assert_eq!(shape[2], 2);
    let (t, f) = (shape[0], shape[1]);
    assert_eq!(tape.shape(mask), &[t, f], "mask shape");

    let re = {
        let s = tape.slice_axis(prev, 2, 0, 1);
        tape.reshape(s, &[t, f])
    };
    let im = {
        let s = tape.slice_axis(prev, 2, 1, 2);
        tape.reshape(s, &[t, f])
    };
    let comp_r = tape.mul(mask, re);
    let comp_i = tape.mul(mask, im);
    let r_out = tape.add(re, comp_r);
    let i_out = tape.add(im, comp_i);
    let r3 = tape.reshape(r_out, &[t, f, 1]);
    let i3 = tape.reshape(i_out, &[t, f, 1]);
    tape.concat_axis(&[r3, i3], 2)
}
