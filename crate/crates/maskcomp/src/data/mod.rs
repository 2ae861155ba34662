//! WAV ingestion, noisy-mixture synthesis at prescribed SNRs, dataset
//! manifests, and the synthetic corpus generator.

pub mod manifest;
pub mod synth;
pub mod wav;

pub use manifest::{Manifest, ManifestEntry, ManifestError, Split};
pub use synth::{speech_like, synth_noise, NoiseKind};
pub use wav::{read_wav, write_wav, WavError, WriteReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::Waveform;
use crate::num::Real;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("noise ({noise} samples) is shorter than clean ({clean})")]
    NoiseTooShort { noise: usize, clean: usize },
    #[error("clean signal has zero power")]
    SilentClean,
    #[error("selected noise segment has zero power")]
    SilentNoiseSegment,
    #[error("snr {0} is not finite")]
    BadSnr(f64),
}

/// A mixture plus everything needed to keep targets aligned with it.
#[derive(Debug, Clone)]
pub struct MixResult<R: Real> {
    pub noisy: Waveform<R>,
    /// Clean reference scaled by the same `peak_scale` as the mixture.
    pub clean: Waveform<R>,
    /// Gain applied to the noise segment to hit the requested SNR.
    pub noise_gain: R,
    /// Joint attenuation applied if the raw mixture exceeded full scale
    /// (1.0 when no normalization was needed).
    pub peak_scale: R,
    /// Seed-determined offset of the noise segment.
    pub noise_offset: usize,
}

/// Mix `clean` with a seed-selected segment of `noise`, scaling the
/// noise so the clean-to-noise power ratio equals `snr_db` exactly
/// (measured over the whole clip, before peak normalization).
pub fn mix_at_snr<R: Real>(
    clean: &Waveform<R>,
    noise: &Waveform<R>,
    snr_db: f64,
    seed: u64,
) -> Result<MixResult<R>, MixError> {
    if !snr_db.is_finite() {
        return Err(MixError::BadSnr(snr_db));
    }
    let n = clean.len();
    if noise.len() < n {
        return Err(MixError::NoiseTooShort { noise: noise.len(), clean: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_offset = rng.gen_range(0..=noise.len() - n);
    let segment = &noise.samples[noise_offset..noise_offset + n];

    let clean_pow = clean.samples.iter().map(|&s| s * s).sum::<R>();
    if clean_pow == R::zero() {
        return Err(MixError::SilentClean);
    }
    let noise_pow = segment.iter().map(|&s| s * s).sum::<R>();
    if noise_pow == R::zero() {
        return Err(MixError::SilentNoiseSegment);
    }

    // 10 log10(Pc / (g^2 Pn)) = snr  =>  g = sqrt(Pc / (Pn 10^(snr/10)))
    let target_ratio = R::of(10f64.powf(snr_db / 10.0));
    let noise_gain = (clean_pow / (noise_pow * target_ratio)).sqrt();

    let mut noisy: Vec<R> = clean
        .samples
        .iter()
        .zip(segment)
        .map(|(&c, &s)| c + noise_gain * s)
        .collect();
    let peak = noisy.iter().fold(R::zero(), |m, v| m.max(v.abs()));
    let peak_scale = if peak > R::one() { peak.recip() } else { R::one() };
    let mut clean_out = clean.samples.clone();
    if peak_scale != R::one() {
        for v in noisy.iter_mut() {
            *v *= peak_scale;
        }
        for v in clean_out.iter_mut() {
            *v *= peak_scale;
        }
    }
    Ok(MixResult {
        noisy: Waveform { samples: noisy, sample_rate: clean.sample_rate },
        clean: Waveform { samples: clean_out, sample_rate: clean.sample_rate },
        noise_gain,
        peak_scale,
        noise_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    fn wave(samples: Vec<f64>) -> Waveform<f64> {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn measured_snr(clean: &[f64], noisy: &[f64]) -> f64 {
        // recover the noise component and recompute the ratio
        let pc: f64 = clean.iter().map(|v| v * v).sum();
        let pn: f64 = noisy.iter().zip(clean).map(|(y, x)| (y - x) * (y - x)).sum();
        10.0 * (pc / pn).log10()
    }

    #[test]
    fn equal_power_zero_db_gives_unit_gain() {
        let clean = wave(vec![0.5, -0.5, 0.5, -0.5]);
        let noise = wave(vec![-0.5, 0.5, -0.5, 0.5]);
        let m = mix_at_snr(&clean, &noise, 0.0, 1).unwrap();
        assert!((m.noise_gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plus_ten_db_equal_power_gain() {
        // g = 10^(-0.5) for equal-power inputs at +10 dB
        let clean = wave(vec![0.5; 256]);
        let noise = wave(vec![-0.5; 256]);
        let m = mix_at_snr(&clean, &noise, 10.0, 1).unwrap();
        assert!((m.noise_gain - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!((m.noise_gain - 0.316_227_766_016_8).abs() < 1e-10);
    }

    #[test]
    fn achieved_snr_is_exact_across_grid() {
        let clean = speech_like::<f64>(8000, 11);
        let noise = synth_noise::<f64>(NoiseKind::White, 12000, 12);
        for snr in [-5.0, -2.0, 0.0, 2.0, 4.0, 5.0, 6.0, 10.0] {
            let m = mix_at_snr(&clean, &noise, snr, 99).unwrap();
            // undo peak normalization before measuring
            let inv = 1.0 / m.peak_scale;
            let raw: Vec<f64> = m.noisy.samples.iter().map(|v| v * inv).collect();
            let got = measured_snr(&clean.samples, &raw);
            assert!((got - snr).abs() < 1e-9, "snr {snr}: achieved {got}");
        }
    }

    #[test]
    fn mixing_is_seed_reproducible() {
        let clean = speech_like::<f64>(4000, 21);
        let noise = synth_noise::<f64>(NoiseKind::Babble, 9000, 22);
        let a = mix_at_snr(&clean, &noise, 3.0, 5).unwrap();
        let b = mix_at_snr(&clean, &noise, 3.0, 5).unwrap();
        assert_eq!(a.noisy.samples, b.noisy.samples);
        assert_eq!(a.noise_offset, b.noise_offset);
        let c = mix_at_snr(&clean, &noise, 3.0, 6).unwrap();
        assert_ne!(a.noise_offset, c.noise_offset);
    }

    #[test]
    fn peak_normalization_keeps_pair_aligned() {
        // large amplitudes force normalization; clean must scale along
        let clean = wave(vec![0.9; 512]);
        let noise = wave(vec![0.9; 512]);
        let m = mix_at_snr(&clean, &noise, 0.0, 1).unwrap();
        assert!(m.peak_scale < 1.0);
        let peak = m.noisy.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak <= 1.0 + 1e-12);
        for (c, orig) in m.clean.samples.iter().zip(&clean.samples) {
            assert!((c - orig * m.peak_scale).abs() < 1e-15);
        }
    }

    #[test]
    fn error_cases_are_distinct() {
        let clean = wave(vec![0.5; 100]);
        let short = wave(vec![0.5; 50]);
        assert_eq!(
            mix_at_snr(&clean, &short, 0.0, 1).unwrap_err(),
            MixError::NoiseTooShort { noise: 50, clean: 100 }
        );
        let silent = wave(vec![0.0; 100]);
        assert_eq!(mix_at_snr(&silent, &clean, 0.0, 1).unwrap_err(), MixError::SilentClean);
        assert_eq!(
            mix_at_snr(&clean, &silent, 0.0, 1).unwrap_err(),
            MixError::SilentNoiseSegment
        );
    }
}
