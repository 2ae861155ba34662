//! Rational-ratio polyphase resampler (windowed-sinc low-pass), used to
//! bring 16 kHz signals to the intelligibility metric's 10 kHz rate.

/// Resample by the rational factor `up / down` with a Blackman-windowed
/// sinc filter. Output length is `ceil(len * up / down)`.
pub fn resample_rational(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    assert!(up > 0 && down > 0);
    if x.is_empty() {
        return Vec::new();
    }
    // cutoff at the tighter of the two Nyquist limits, in cycles per
    // sample at the upsampled rate
    let fc = 0.5 / up.max(down) as f64;
    // 10 sinc zero crossings per side
    let half = (10.0 / (2.0 * fc)).ceil() as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64;
            let sinc = if i == 0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            // Blackman window over [-half, half]
            let u = (t + half as f64) / (2.0 * half as f64);
            let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * u).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * u).cos();
            sinc * w
        })
        .collect();

    let out_len = (x.len() * up).div_ceil(down);
    let gain = up as f64;
    let mut out = vec![0.0; out_len];
    for (m, o) in out.iter_mut().enumerate() {
        // center of this output sample on the upsampled grid
        let p = (m * down) as isize;
        let mut acc = 0.0;
        // only grid points that coincide with input samples contribute
        for (j, &h) in taps.iter().enumerate() {
            let grid = p + half - j as isize;
            if grid >= 0 && grid % up as isize == 0 {
                let idx = (grid / up as isize) as usize;
                if idx < x.len() {
                    acc += h * x[idx];
                }
            }
        }
        *o = gain * acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn output_length_is_rational_ratio() {
        let x = vec![0.0; 16000];
        assert_eq!(resample_rational(&x, 5, 8).len(), 10000);
        assert_eq!(resample_rational(&x, 1, 1).len(), 16000);
    }

    #[test]
    fn dc_level_is_preserved() {
        let x = vec![0.7; 4000];
        let y = resample_rational(&x, 5, 8);
        // interior samples (filter fully inside the signal)
        let interior = &y[200..y.len() - 200];
        for v in interior {
            assert!((v - 0.7).abs() < 1e-3, "dc drifted to {v}");
        }
    }

    #[test]
    fn sine_survives_with_frequency_intact() {
        // 440 Hz at 16 kHz -> still 440 Hz at 10 kHz
        let n = 16000;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 440.0 * i as f64 / 16000.0).sin()).collect();
        let y = resample_rational(&x, 5, 8);
        // count zero crossings in one interior second
        let interior = &y[500..9500];
        let crossings = interior.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count();
        let seconds = interior.len() as f64 / 10000.0;
        let freq = crossings as f64 / seconds;
        assert!((freq - 440.0).abs() < 5.0, "measured {freq} Hz");
        // amplitude roughly preserved
        let peak = interior.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.05, "peak {peak}");
    }

    #[test]
    fn unit_ratio_is_near_identity() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let y = resample_rational(&x, 1, 1);
        for (a, b) in x[50..950].iter().zip(&y[50..950]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
