//! Time-frequency analysis and synthesis.
//!
//! Waveforms are mapped to `T x F x 2` real/imaginary spectrograms by a
//! Hann-windowed STFT and reconstructed by weighted overlap-add with
//! envelope (COLA) normalization. The synthesis path is also available
//! as a differentiable tape op so time-domain losses can train the
//! network through it.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{CustomOp, Tape, TensorId};
use crate::num::{magnitude_floor, Real};

/// The only sample rate the pipeline operates at.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("sample rate must be {SAMPLE_RATE} Hz, got {0}")]
    SampleRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("window length {0} must be at least 2")]
    WindowTooShort(usize),
    #[error("fft size {0} must be a power of two")]
    FftSizeNotPowerOfTwo(usize),
    #[error("hop {hop} must divide fft size {fft_size}")]
    HopDoesNotDivide { hop: usize, fft_size: usize },
    #[error("signal of {len} samples is shorter than one frame ({fft_size})")]
    SignalTooShort { len: usize, fft_size: usize },
    #[error("spectrogram has {got} bins, config implies {want}")]
    BinCountMismatch { got: usize, want: usize },
    #[error("requested {out_len} output samples, only {max} are reconstructable")]
    OutputTooLong { out_len: usize, max: usize },
}

/// Analysis window kind. Only Hann is used by the model; the enum keeps
/// the config file honest about it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hann,
}

/// STFT framing parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { fft_size: 512, hop: 256, window: WindowKind::Hann }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self, DspError> {
        if !fft_size.is_power_of_two() || fft_size < 2 {
            return Err(DspError::FftSizeNotPowerOfTwo(fft_size));
        }
        if hop == 0 || fft_size % hop != 0 {
            return Err(DspError::HopDoesNotDivide { hop, fft_size });
        }
        Ok(StftConfig { fft_size, hop, window: WindowKind::Hann })
    }

    /// Number of non-negative-frequency bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples (tail zero-padded).
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.fft_size {
            1
        } else {
            1 + (len - self.fft_size).div_ceil(self.hop)
        }
    }
}

/// Mono audio at 16 kHz, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<R: Real> {
    pub samples: Vec<R>,
    pub sample_rate: u32,
}

impl<R: Real> Waveform<R> {
    pub fn new(samples: Vec<R>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate != SAMPLE_RATE {
            return Err(DspError::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFiniteSample(i));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `T x F x 2` spectrogram; channel 0 holds the real part, channel 1 the
/// imaginary part, flat layout `(t * bins + f) * 2 + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<R: Real> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<R>,
}

impl<R: Real> ComplexSpectrogram<R> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        ComplexSpectrogram { frames, bins, data: vec![R::zero(); frames * bins * 2] }
    }

    pub fn from_data(frames: usize, bins: usize, data: Vec<R>) -> Self {
        assert_eq!(data.len(), frames * bins * 2, "spectrogram data length");
        ComplexSpectrogram { frames, bins, data }
    }

    #[inline]
    pub fn re(&self, t: usize, f: usize) -> R {
        self.data[(t * self.bins + f) * 2]
    }

    #[inline]
    pub fn im(&self, t: usize, f: usize) -> R {
        self.data[(t * self.bins + f) * 2 + 1]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.bins, 2]
    }
}

/// Periodic Hann window, `w[k] = 0.5 - 0.5 cos(2 pi k / n)`.
pub fn hann_window<R: Real>(n: usize) -> Result<Vec<R>, DspError> {
    if n < 2 {
        return Err(DspError::WindowTooShort(n));
    }
    Ok((0..n)
        .map(|k| R::of(0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

/// Iterative radix-2 FFT, in place. Twiddles come from f64 trig so the
/// f32 instantiation keeps full single precision.
fn fft_in_place<R: Real>(re: &mut [R], im: &mut [R], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && n == im.len());
    // bit-reversal permutation
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
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let ang = step * k as f64;
                let (wr, wi) = (R::of(ang.cos()), R::of(ang.sin()));
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
    if inverse {
        let inv = R::of(1.0 / n as f64);
        for v in re.iter_mut() {
            *v *= inv;
        }
        for v in im.iter_mut() {
            *v *= inv;
        }
    }
}

/// Short-time Fourier transform. The tail is zero-padded to complete the
/// last frame; only non-negative-frequency bins are kept.
pub fn stft<R: Real>(
    w: &Waveform<R>,
    cfg: &StftConfig,
) -> Result<ComplexSpectrogram<R>, DspError> {
    let n = cfg.fft_size;
    let len = w.len();
    if len < n {
        return Err(DspError::SignalTooShort { len, fft_size: n });
    }
    let window = hann_window::<R>(n)?;
    let frames = cfg.frame_count(len);
    let bins = cfg.bins();
    let mut out = ComplexSpectrogram::zeros(frames, bins);
    let mut re = vec![R::zero(); n];
    let mut im = vec![R::zero(); n];
    for t in 0..frames {
        let start = t * cfg.hop;
        for j in 0..n {
            let s = if start + j < len { w.samples[start + j] } else { R::zero() };
            re[j] = s * window[j];
            im[j] = R::zero();
        }
        fft_in_place(&mut re, &mut im, false);
        for f in 0..bins {
            out.data[(t * bins + f) * 2] = re[f];
            out.data[(t * bins + f) * 2 + 1] = im[f];
        }
    }
    Ok(out)
}

/// Synthesis shared by the plain and differentiable inverse transforms:
/// per-frame inverse real DFT, Hann weighting, overlap-add, then
/// division by the accumulated squared-window envelope.
fn synthesize<R: Real>(
    data: &[R],
    frames: usize,
    cfg: &StftConfig,
    out_len: usize,
) -> Vec<R> {
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let window = hann_window::<R>(n).expect("fft size >= 2");
    let envelope = ola_envelope(&window, frames, cfg.hop, out_len);
    let mut acc = vec![R::zero(); out_len];
    let mut re = vec![R::zero(); n];
    let mut im = vec![R::zero(); n];
    for t in 0..frames {
        // rebuild the full conjugate-symmetric spectrum; imaginary parts
        // of DC and Nyquist cannot influence a real signal and are
        // dropped by taking the real part below
        for f in 0..bins {
            re[f] = data[(t * bins + f) * 2];
            im[f] = data[(t * bins + f) * 2 + 1];
        }
        for f in bins..n {
            re[f] = re[n - f];
            im[f] = -im[n - f];
        }
        fft_in_place(&mut re, &mut im, true);
        let start = t * cfg.hop;
        for j in 0..n {
            if start + j < out_len {
                acc[start + j] += re[j] * window[j];
            }
        }
    }
    for (a, &e) in acc.iter_mut().zip(&envelope) {
        if e > magnitude_floor::<R>() {
            *a /= e;
        } else {
            *a = R::zero();
        }
    }
    acc
}

fn ola_envelope<R: Real>(window: &[R], frames: usize, hop: usize, out_len: usize) -> Vec<R> {
    let mut env = vec![R::zero(); out_len];
    for t in 0..frames {
        let start = t * hop;
        for (j, &w) in window.iter().enumerate() {
            if start + j < out_len {
                env[start + j] += w * w;
            }
        }
    }
    env
}

/// Inverse STFT by weighted overlap-add. `istft(stft(x))` reproduces `x`
/// wherever the window envelope is non-zero (everywhere except sample 0
/// for the periodic Hann).
pub fn istft<R: Real>(
    s: &ComplexSpectrogram<R>,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Waveform<R>, DspError> {
    if s.bins != cfg.bins() {
        return Err(DspError::BinCountMismatch { got: s.bins, want: cfg.bins() });
    }
    let max = (s.frames - 1) * cfg.hop + cfg.fft_size;
    if out_len > max {
        return Err(DspError::OutputTooLong { out_len, max });
    }
    let samples = synthesize(&s.data, s.frames, cfg, out_len);
    Waveform::new(samples, SAMPLE_RATE)
}

/// Magnitude and four-quadrant phase of a spectrogram. The angle follows
/// the complex number `R + jI` (so `Mag cos(theta) = R` and
/// `Mag sin(theta) = I`); bins with magnitude below 1e-12 get phase 0.
pub fn mag_phase<R: Real>(s: &ComplexSpectrogram<R>) -> (Vec<R>, Vec<R>) {
    let n = s.frames * s.bins;
    let mut mag = vec![R::zero(); n];
    let mut theta = vec![R::zero(); n];
    let floor = magnitude_floor::<R>();
    for i in 0..n {
        let re = s.data[2 * i];
        let im = s.data[2 * i + 1];
        let m = (re * re + im * im).sqrt();
        mag[i] = m;
        theta[i] = if m < floor { R::zero() } else { im.atan2(re) };
    }
    (mag, theta)
}

// ── differentiable synthesis ──────────────────────────────────────────

struct IstftOla {
    cfg: StftConfig,
    out_len: usize,
}

impl<R: Real> CustomOp<R> for IstftOla {
    fn name(&self) -> &'static str {
        "istft_ola"
    }

    fn backward(
        &self,
        grad_out: &[R],
        inputs: &[(&[usize], &[R])],
        _out_value: &[R],
        grad_inputs: &mut [Vec<R>],
    ) {
        let (shape, _) = inputs[0];
        let (frames, bins) = (shape[0], shape[1]);
        let n = self.cfg.fft_size;
        let window = hann_window::<R>(n).expect("fft size >= 2");
        let envelope = ola_envelope(&window, frames, self.cfg.hop, self.out_len);
        let floor = magnitude_floor::<R>();

        // chain through the envelope division and the window, then apply
        // the adjoint of the per-frame inverse real DFT (a forward DFT)
        let mut g = vec![R::zero(); n];
        let mut gre = vec![R::zero(); n];
        let mut gim = vec![R::zero(); n];
        let two_over = R::of(2.0 / n as f64);
        let one_over = R::of(1.0 / n as f64);
        let dest = &mut grad_inputs[0];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for j in 0..n {
                let idx = start + j;
                g[j] = if idx < self.out_len && envelope[idx] > floor {
                    grad_out[idx] * window[j] / envelope[idx]
                } else {
                    R::zero()
                };
                gre[j] = g[j];
                gim[j] = R::zero();
            }
            fft_in_place(&mut gre, &mut gim, false);
            for f in 0..bins {
                let base = (t * bins + f) * 2;
                if f == 0 || f == bins - 1 {
                    dest[base] += one_over * gre[f];
                    // imaginary DC/Nyquist never reach the output
                } else {
                    dest[base] += two_over * gre[f];
                    dest[base + 1] += two_over * gim[f];
                }
            }
        }
    }
}

/// Record the inverse STFT on a tape: input is a `[T, F, 2]` tensor,
/// output the reconstructed `[out_len]` waveform. Gradients flow back to
/// every bin (except imaginary DC/Nyquist, which a real signal cannot
/// see).
pub fn istft_graph<R: Real>(
    tape: &mut Tape<R>,
    spec: TensorId,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<TensorId, DspError> {
    let shape = tape.shape(spec).to_vec();
    assert_eq!(shape.len(), 3, "istft_graph expects [T, F, 2]");
    assert_eq!(shape[2], 2, "istft_graph expects a real/imaginary channel pair");
    if shape[1] != cfg.bins() {
        return Err(DspError::BinCountMismatch { got: shape[1], want: cfg.bins() });
    }
    let max = (shape[0] - 1) * cfg.hop + cfg.fft_size;
    if out_len > max {
        return Err(DspError::OutputTooLong { out_len, max });
    }
    let values = synthesize(tape.value(spec), shape[0], cfg, out_len);
    let op = Arc::new(IstftOla { cfg: cfg.clone(), out_len });
    Ok(tape.custom(op, &[spec], values, &[out_len]))
}
