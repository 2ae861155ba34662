//! Synthetic corpus: speech-shaped utterances (harmonic stacks under
//! formant-like envelopes with a syllabic rhythm) and noises. Everything
//! is seeded, so tests and the tiny-overfit recipe run with zero
//! external downloads. Real corpora plug in through the same manifest.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// Several overlapping speech-shaped streams, crowd-style.
    Babble,
}

/// Speech-like utterance: a wobbling fundamental near 120 Hz, harmonics
/// shaped by three formant bumps, a ~4 Hz syllabic envelope, and a low
/// breath-noise floor. Peak-normalized to 0.5.
pub fn speech_like<R: Real>(len: usize, seed: u64) -> Waveform<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0_base = rng.gen_range(100.0..160.0);
    let f0_wobble = rng.gen_range(2.0..5.0);
    let syllable_rate = rng.gen_range(2.5..4.5);
    let formants = [
        (rng.gen_range(400.0..700.0), 150.0, 1.0),
        (rng.gen_range(1200.0..1800.0), 250.0, 0.5),
        (rng.gen_range(2300.0..3000.0), 350.0, 0.25),
    ];
    let syl_phase = rng.gen_range(0.0..2.0 * PI);
    let breath: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0) * 0.01).collect();

    let sr = SAMPLE_RATE as f64;
    let mut phase = 0.0f64;
    let mut out = vec![0.0f64; len];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = f0_base * (1.0 + 0.05 * (2.0 * PI * f0_wobble * t).sin());
        phase += 2.0 * PI * f0 / sr;
        // syllabic envelope, raised-cosine so it never goes negative
        let syl = 0.5 * (1.0 + (2.0 * PI * syllable_rate * t + syl_phase).sin());
        let env = 0.15 + 0.85 * syl * syl;
        let mut s = 0.0;
        let mut h = 1.0;
        while h * f0 < 4000.0 {
            let freq = h * f0;
            // formant weighting of this harmonic
            let mut w = 0.05;
            for (fc, bw, amp) in formants {
                let d = (freq - fc) / bw;
                w += amp * (-0.5 * d * d).exp();
            }
            s += w / h * (phase * h).sin();
            h += 1.0;
        }
        *o = env * s + breath[i];
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = out.iter().map(|&v| R::of(v / peak * 0.5)).collect();
    Waveform { samples, sample_rate: SAMPLE_RATE }
}

/// Seeded noise generator, peak-normalized to 0.5.
pub fn synth_noise<R: Real>(kind: NoiseKind, len: usize, seed: u64) -> Waveform<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973);
    let out: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        NoiseKind::Babble => {
            let mut mix = vec![0.0f64; len];
            for k in 0..6 {
                let talker = speech_like::<f64>(len, seed.wrapping_mul(31).wrapping_add(k));
                let gain = rng.gen_range(0.5..1.0);
                // offset each stream so the syllables collide
                let shift = rng.gen_range(0..len.max(1));
                for (i, m) in mix.iter_mut().enumerate() {
                    *m += gain * talker.samples[(i + shift) % len];
                }
            }
            mix
        }
    };
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = out.iter().map(|&v| R::of(v / peak * 0.5)).collect();
    Waveform { samples, sample_rate: SAMPLE_RATE }
}
