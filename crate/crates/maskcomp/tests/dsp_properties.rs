//! Property tests for the transform and mixing invariants.

use proptest::prelude::*;

use maskcomp::data::mix_at_snr;
use maskcomp::dsp::{istft, mag_phase, stft, StftConfig, Waveform, SAMPLE_RATE};
use maskcomp::losses::si_sdr;

fn wave(samples: Vec<f64>) -> Waveform<f64> {
    Waveform::new(samples, SAMPLE_RATE).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_round_trip_reconstructs_interior(
        seed in 0u64..1000,
        len in (2 * 512usize)..(4 * 512),
        amp in 0.05f64..0.95,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-amp..amp)).collect();
        let cfg = StftConfig::default();
        let s = stft(&wave(samples.clone()), &cfg).unwrap();
        let back = istft(&s, &cfg, len).unwrap();
        let max_err = samples
            .iter()
            .zip(&back.samples)
            .skip(1) // sample 0 sits under the zero of the window
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn mag_phase_reconstruction_identity(
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = StftConfig::new(64, 32).unwrap();
        let samples: Vec<f64> = (0..512).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let s = stft(&wave(samples), &cfg).unwrap();
        let (mag, theta) = mag_phase(&s);
        for i in 0..s.frames * s.bins {
            if mag[i] >= 1e-12 {
                prop_assert!((mag[i] * theta[i].cos() - s.data[2 * i]).abs() < 1e-9);
                prop_assert!((mag[i] * theta[i].sin() - s.data[2 * i + 1]).abs() < 1e-9);
            } else {
                prop_assert_eq!(theta[i], 0.0);
            }
        }
    }

    #[test]
    fn mixing_hits_requested_snr(
        snr in -20.0f64..20.0,
        seed in 0u64..500,
    ) {
        let clean = maskcomp::data::speech_like::<f64>(4000, seed);
        let noise = maskcomp::data::synth_noise::<f64>(
            maskcomp::data::NoiseKind::White, 6000, seed + 1);
        let m = mix_at_snr(&clean, &noise, snr, seed).unwrap();
        let inv = 1.0 / m.peak_scale;
        let pc: f64 = clean.samples.iter().map(|v| v * v).sum();
        let pn: f64 = m
            .noisy
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(y, x)| (y * inv - x) * (y * inv - x))
            .sum();
        let got = 10.0 * (pc / pn).log10();
        prop_assert!((got - snr).abs() < 1e-9, "requested {snr}, achieved {got}");
    }

    #[test]
    fn sisdr_scale_invariance_over_decade(
        c in 0.1f64..10.0,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let reference: Vec<f64> = (0..2048).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let est: Vec<f64> = reference.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        let base = si_sdr(&wave(est.clone()), &wave(reference.clone()), 1e-8).unwrap();
        let scaled: Vec<f64> = reference.iter().map(|v| v * c).collect();
        let v = si_sdr(&wave(est), &wave(scaled), 1e-8).unwrap();
        prop_assert!((v - base).abs() < 1e-6, "c={c}: {v} vs {base}");
    }
}
