//! Extended short-time objective intelligibility.
//!
//! The published algorithm, with its fixed constants: both signals are
//! brought to 10 kHz, silent frames are removed by a 40 dB energy range
//! rule on the clean signal, a 256/128 Hann STFT (512-point FFT) feeds
//! 15 one-third-octave bands starting at 150 Hz, and length-30 (384 ms)
//! band-by-frame segments are row- then column-normalized and correlated.
//! The result lies in [-1, 1]; higher means more intelligible.

use thiserror::Error;

use super::resample::resample_rational;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::num::Real;

const FS: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEG_FRAMES: usize = 30; // 30 x 12.8 ms = 384 ms
const DYN_RANGE_DB: f64 = 40.0;
const TINY: f64 = 1e-20;

#[derive(Debug, Error, PartialEq)]
pub enum EstoiError {
    #[error("signals differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("too short: {frames} active frames, need at least {need} (384 ms of speech)")]
    TooShort { frames: usize, need: usize },
    #[error("input must be 16 kHz, got {0}")]
    SampleRate(u32),
}

/// Symmetric Hann used by the intelligibility framing (no zero
/// endpoints).
fn hanning(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos()))
        .collect()
}

/// Remove frames whose clean-signal energy is more than 40 dB below the
/// loudest frame; both signals keep the same frames and are rebuilt by
/// overlap-add at the compacted positions.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let w = hanning(FRAME);
    let mut starts = Vec::new();
    let mut s = 0usize;
    while s + FRAME <= x.len() {
        starts.push(s);
        s += HOP;
    }
    let energies: Vec<f64> = starts
        .iter()
        .map(|&st| {
            let e: f64 = (0..FRAME).map(|j| (x[st + j] * w[j]).powi(2)).sum();
            20.0 * (e.sqrt() / (FRAME as f64).sqrt() + TINY).log10()
        })
        .collect();
    let max_e = energies.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .enumerate()
        .filter(|(j, _)| energies[*j] - max_e + DYN_RANGE_DB > 0.0)
        .map(|(_, &st)| st)
        .collect();

    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * HOP + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (i, &st) in keep.iter().enumerate() {
        let dst = i * HOP;
        for j in 0..FRAME {
            xs[dst + j] += x[st + j] * w[j];
            ys[dst + j] += y[st + j] * w[j];
        }
    }
    (xs, ys, keep.len())
}

/// One-third-octave band magnitudes: `bands x frames`.
fn band_decomposition(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hanning(FRAME);
    let bins = NFFT / 2 + 1;
    // band edges in Hz -> bin ranges
    let band_bins: Vec<(usize, usize)> = (0..NUM_BANDS)
        .map(|j| {
            let cf = MIN_FREQ * 2f64.powf(j as f64 / 3.0);
            let lo = cf / 2f64.powf(1.0 / 6.0);
            let hi = cf * 2f64.powf(1.0 / 6.0);
            let to_bin = |f: f64| (f * NFFT as f64 / FS as f64).round() as usize;
            (to_bin(lo).min(bins - 1), to_bin(hi).min(bins))
        })
        .collect();

    let mut frames = Vec::new();
    let mut s = 0usize;
    while s + FRAME <= x.len() {
        frames.push(s);
        s += HOP;
    }
    let mut out = vec![vec![0.0; frames.len()]; NUM_BANDS];
    let mut re = vec![0.0; NFFT];
    let mut im = vec![0.0; NFFT];
    for (m, &st) in frames.iter().enumerate() {
        for j in 0..NFFT {
            re[j] = if j < FRAME { x[st + j] * w[j] } else { 0.0 };
            im[j] = 0.0;
        }
        dft_in_place(&mut re, &mut im);
        for (b, &(lo, hi)) in band_bins.iter().enumerate() {
            let mut e = 0.0;
            for k in lo..hi {
                e += re[k] * re[k] + im[k] * im[k];
            }
            out[b][m] = e.sqrt();
        }
    }
    out
}

/// Radix-2 FFT over NFFT (power of two), local to the metric so it has
/// no dependency on the training-side transform code.
fn dft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let ang = step * k as f64;
                let (wr, wi) = (ang.cos(), ang.sin());
                let (ur, ui) = (re[start + k], im[start + k]);
                let (xr, xi) = (re[start + k + half], im[start + k + half]);
                let vr = xr * wr - xi * wi;
                let vi = xr * wi + xi * wr;
                re[start + k] = ur + vr;
                im[start + k] = ui + vi;
                re[start + k + half] = ur - vr;
                im[start + k + half] = ui - vi;
            }
        }
        len <<= 1;
    }
}

/// Row-normalize then column-normalize a `bands x SEG_FRAMES` segment in
/// place (zero mean, unit norm per row, then per column).
fn double_normalize(seg: &mut [Vec<f64>]) {
    for row in seg.iter_mut() {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt() + TINY;
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    let cols = seg[0].len();
    for c in 0..cols {
        let mean = seg.iter().map(|r| r[c]).sum::<f64>() / seg.len() as f64;
        for row in seg.iter_mut() {
            row[c] -= mean;
        }
        let norm = seg.iter().map(|r| r[c] * r[c]).sum::<f64>().sqrt() + TINY;
        for row in seg.iter_mut() {
            row[c] /= norm;
        }
    }
}

/// Extended short-time objective intelligibility of `processed` against
/// `clean`. Both must be 16 kHz and equally long.
pub fn estoi<R: Real>(clean: &Waveform<R>, processed: &Waveform<R>) -> Result<f64, EstoiError> {
    if clean.sample_rate != SAMPLE_RATE {
        return Err(EstoiError::SampleRate(clean.sample_rate));
    }
    if clean.len() != processed.len() {
        return Err(EstoiError::LengthMismatch { a: clean.len(), b: processed.len() });
    }
    let x16: Vec<f64> = clean.samples.iter().map(|v| v.as_f64()).collect();
    let y16: Vec<f64> = processed.samples.iter().map(|v| v.as_f64()).collect();
    // 16 kHz -> 10 kHz is the rational ratio 5/8
    let x = resample_rational(&x16, 5, 8);
    let y = resample_rational(&y16, 5, 8);

    let (xs, ys, kept) = remove_silent_frames(&x, &y);
    // frames after re-framing the compacted signals
    let tf_frames = if xs.len() >= FRAME { (xs.len() - FRAME) / HOP + 1 } else { 0 };
    if kept == 0 || tf_frames < SEG_FRAMES {
        return Err(EstoiError::TooShort { frames: tf_frames, need: SEG_FRAMES });
    }

    let xb = band_decomposition(&xs);
    let yb = band_decomposition(&ys);
    let frames = xb[0].len();

    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEG_FRAMES..=frames {
        let mut xseg: Vec<Vec<f64>> =
            xb.iter().map(|row| row[m - SEG_FRAMES..m].to_vec()).collect();
        let mut yseg: Vec<Vec<f64>> =
            yb.iter().map(|row| row[m - SEG_FRAMES..m].to_vec()).collect();
        double_normalize(&mut xseg);
        double_normalize(&mut yseg);
        let mut d = 0.0;
        for c in 0..SEG_FRAMES {
            let mut dot = 0.0;
            for b in 0..NUM_BANDS {
                dot += xseg[b][c] * yseg[b][c];
            }
            d += dot;
        }
        total += d / SEG_FRAMES as f64;
        count += 1;
    }
    Ok(total / count as f64)
}
