//! Training objectives: mean absolute error over real/imaginary spectra
//! with a magnitude-constraint term, negative SI-SDR on waveforms, and
//! their weighted sum. Every loss exists in two forms: a plain-value
//! evaluation and a tape version that differentiates end to end.

use thiserror::Error;

use crate::autodiff::{Tape, TensorId};
use crate::dsp::{ComplexSpectrogram, Waveform};
use crate::num::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("spectra differ in shape: {a:?} vs {b:?}")]
    SpectraShape { a: [usize; 3], b: [usize; 3] },
    #[error("waveforms differ in length: {a} vs {b}")]
    WaveLength { a: usize, b: usize },
    #[error("waveforms must be non-empty")]
    Empty,
    #[error("reference signal is identically zero")]
    ZeroReference,
    #[error("loss config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub sisdr_epsilon: f64,
    pub w_mae: f64,
    pub w_sisdr: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { sisdr_epsilon: 1e-8, w_mae: 1.0, w_sisdr: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.sisdr_epsilon > 0.0) {
            return Err(LossError::BadConfig("sisdr_epsilon must be positive"));
        }
        if self.w_mae < 0.0 || self.w_sisdr < 0.0 {
            return Err(LossError::BadConfig("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean absolute error between two `T x F x 2` spectra: the per-bin sum
/// of |dR| + |dI| averaged over the T*F bins, plus the mean absolute
/// difference of bin magnitudes (the magnitude constraint).
pub fn mae_loss<R: Real>(
    est: &ComplexSpectrogram<R>,
    target: &ComplexSpectrogram<R>,
) -> Result<R, LossError> {
    if est.shape() != target.shape() {
        return Err(LossError::SpectraShape { a: est.shape(), b: target.shape() });
    }
    let bins = est.frames * est.bins;
    let m = R::of(bins as f64);
    let mut ri = R::zero();
    let mut mag = R::zero();
    for i in 0..bins {
        let (er, ei) = (est.data[2 * i], est.data[2 * i + 1]);
        let (tr, ti) = (target.data[2 * i], target.data[2 * i + 1]);
        ri += (er - tr).abs() + (ei - ti).abs();
        let em = (er * er + ei * ei).sqrt();
        let tm = (tr * tr + ti * ti).sqrt();
        mag += (em - tm).abs();
    }
    Ok(ri / m + mag / m)
}

/// Tape version of [`mae_loss`]; `est` is a `[T, F, 2]` tensor, the
/// target is constant.
pub fn mae_loss_graph<R: Real>(
    tape: &mut Tape<R>,
    est: TensorId,
    target: &ComplexSpectrogram<R>,
) -> Result<TensorId, LossError> {
    let shape = tape.shape(est).to_vec();
    if shape != [target.frames, target.bins, 2] {
        return Err(LossError::SpectraShape {
            a: [shape[0], shape[1], shape[2]],
            b: target.shape(),
        });
    }
    let (t, f) = (target.frames, target.bins);
    let inv_m = R::of(1.0 / (t * f) as f64);

    let tgt = tape.constant(target.data.clone(), &[t, f, 2]);
    let diff = tape.sub(est, tgt);
    let absdiff = tape.abs(diff);
    let ri_sum = tape.sum(absdiff);
    let ri_term = tape.scale(ri_sum, inv_m);

    let est_mag = magnitude_graph(tape, est, t, f);
    let tgt_mag = magnitude_graph(tape, tgt, t, f);
    let mdiff = tape.sub(est_mag, tgt_mag);
    let mabs = tape.abs(mdiff);
    let mag_sum = tape.sum(mabs);
    let mag_term = tape.scale(mag_sum, inv_m);

    Ok(tape.add(ri_term, mag_term))
}

/// Per-bin magnitude `sqrt(R^2 + I^2)` of a `[T, F, 2]` tensor as a
/// `[T, F]` tensor (gradient 0 at silent bins, per the sqrt rule).
fn magnitude_graph<R: Real>(tape: &mut Tape<R>, spec: TensorId, t: usize, f: usize) -> TensorId {
    let re = {
        let s = tape.slice_axis(spec, 2, 0, 1);
        tape.reshape(s, &[t, f])
    };
    let im = {
        let s = tape.slice_axis(spec, 2, 1, 2);
        tape.reshape(s, &[t, f])
    };
    let r2 = tape.mul(re, re);
    let i2 = tape.mul(im, im);
    let sum = tape.add(r2, i2);
    tape.sqrt(sum)
}

/// Scale-invariant signal-to-distortion ratio in dB:
/// `alpha = <est, ref> / (||ref||^2 + eps)`, value
/// `10 log10((||alpha ref||^2 + eps) / (||alpha ref - est||^2 + eps))`.
pub fn si_sdr<R: Real>(est: &Waveform<R>, reference: &Waveform<R>, eps: f64) -> Result<R, LossError> {
    if est.len() != reference.len() {
        return Err(LossError::WaveLength { a: est.len(), b: reference.len() });
    }
    if est.is_empty() {
        return Err(LossError::Empty);
    }
    if reference.samples.iter().all(|&s| s == R::zero()) {
        return Err(LossError::ZeroReference);
    }
    let eps = R::of(eps);
    let mut dot = R::zero();
    let mut ref_pow = R::zero();
    for (&e, &r) in est.samples.iter().zip(&reference.samples) {
        dot += e * r;
        ref_pow += r * r;
    }
    let alpha = dot / (ref_pow + eps);
    let mut num = R::zero();
    let mut den = R::zero();
    for (&e, &r) in est.samples.iter().zip(&reference.samples) {
        let proj = alpha * r;
        num += proj * proj;
        let err = proj - e;
        den += err * err;
    }
    let ten = R::of(10.0);
    Ok(ten * ((num + eps) / (den + eps)).log10())
}

/// Tape version of [`si_sdr`]; the reference is constant, `est` is a
/// `[n]` tensor.
pub fn si_sdr_graph<R: Real>(
    tape: &mut Tape<R>,
    est: TensorId,
    reference: &[R],
    eps: f64,
) -> Result<TensorId, LossError> {
    let n = tape.numel(est);
    if n != reference.len() {
        return Err(LossError::WaveLength { a: n, b: reference.len() });
    }
    if n == 0 {
        return Err(LossError::Empty);
    }
    if reference.iter().all(|&s| s == R::zero()) {
        return Err(LossError::ZeroReference);
    }
    let eps = R::of(eps);
    let shape = tape.shape(est).to_vec();
    let r = tape.constant(reference.to_vec(), &shape);

    let dot = tape.dot(est, r);
    let ref_pow = tape.dot(r, r);
    let denom = tape.add_const(ref_pow, eps);
    let inv = tape.recip(denom);
    let alpha = tape.mul(dot, inv); // scalar [1]

    let proj = tape.mul_scalar(r, alpha);
    let num = {
        let p = tape.dot(proj, proj);
        tape.add_const(p, eps)
    };
    let den = {
        let e = tape.sub(proj, est);
        let p = tape.dot(e, e);
        tape.add_const(p, eps)
    };
    // 10 log10(num/den) = (10/ln 10) (ln num - ln den)
    let ln_num = tape.ln(num);
    let ln_den = tape.ln(den);
    let diff = tape.sub(ln_num, ln_den);
    Ok(tape.scale(diff, R::of(10.0 / std::f64::consts::LN_10)))
}

/// Joint objective: `w_mae * MAE - w_sisdr * SI-SDR` (negated so lower
/// is better). `est_wave` must be the synthesis of `est_spec`.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss_graph<R: Real>(
    tape: &mut Tape<R>,
    est_spec: TensorId,
    target_spec: &ComplexSpectrogram<R>,
    est_wave: TensorId,
    target_wave: &[R],
    cfg: &LossConfig,
) -> Result<TensorId, LossError> {
    cfg.validate()?;
    let mae = mae_loss_graph(tape, est_spec, target_spec)?;
    let sdr = si_sdr_graph(tape, est_wave, target_wave, cfg.sisdr_epsilon)?;
    let mae_w = tape.scale(mae, R::of(cfg.w_mae));
    let sdr_w = tape.scale(sdr, R::of(cfg.w_sisdr));
    Ok(tape.sub(mae_w, sdr_w))
}

/// Plain-value twin of [`joint_loss_graph`] for verification.
pub fn joint_loss<R: Real>(
    est_spec: &ComplexSpectrogram<R>,
    target_spec: &ComplexSpectrogram<R>,
    est_wave: &Waveform<R>,
    target_wave: &Waveform<R>,
    cfg: &LossConfig,
) -> Result<R, LossError> {
    cfg.validate()?;
    let mae = mae_loss(est_spec, target_spec)?;
    let sdr = si_sdr(est_wave, target_wave, cfg.sisdr_epsilon)?;
    Ok(R::of(cfg.w_mae) * mae - R::of(cfg.w_sisdr) * sdr)
}
