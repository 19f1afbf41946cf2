use std::f64::consts::PI;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Taps per output sample.
const TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;
/// Fraction of the output Nyquist kept by the anti-alias lowpass.
const ROLLOFF: f64 = 0.94;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resample with a 32-tap Kaiser-windowed sinc interpolator.
///
/// Samples outside the input are treated as zero. Output length is
/// `ceil(len * to / from)`.
pub fn resample(w: &Waveform, to: u32) -> Result<Waveform> {
    if to == 0 {
        return Err(Error::domain("target sample rate must be positive"));
    }
    if w.sample_rate == to {
        return Ok(w.clone());
    }
    let ratio = to as f64 / w.sample_rate as f64;
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half = (TAPS / 2) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let n_out = (w.len() as f64 * ratio).ceil() as usize;
    let src = &w.samples;
    let out = (0..n_out)
        .map(|n| {
            let x = n as f64 / ratio;
            let base = x.floor() as i64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for k in (base - TAPS as i64 / 2 + 1)..=(base + TAPS as i64 / 2) {
                let d = x - k as f64;
                let r = d / half;
                if r.abs() >= 1.0 {
                    continue;
                }
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                let h = cutoff * sinc(cutoff * d) * win;
                norm += h;
                if k >= 0 && (k as usize) < src.len() {
                    acc += src[k as usize] * h;
                }
            }
            if norm != 0.0 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(out, to)
}

/// Convert to 16 kHz and scale the peak to 1.
///
/// Input already at 16 kHz skips resampling, so a standardized waveform is a
/// fixed point of this function.
pub fn standardize(w: &Waveform) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::domain("cannot standardize an empty waveform"));
    }
    Ok(resample(w, SAMPLE_RATE)?.peak_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::dft_peak_hz;

    fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn same_rate_only_normalizes() {
        let w = sine(440.0, 16000, 0.5, 0.25);
        let s = standardize(&w).unwrap();
        let peak = w.peak();
        for (a, b) in w.samples.iter().zip(&s.samples) {
            assert_eq!(*b, a / peak);
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let s1 = standardize(&sine(300.0, 44100, 0.3, 0.7)).unwrap();
        let s2 = standardize(&s1).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn downsampled_sine_keeps_frequency() {
        let w = sine(1000.0, 32000, 2.0, 0.8);
        let s = standardize(&w).unwrap();
        assert_eq!(s.sample_rate, 16000);
        assert_eq!(s.len(), 32000);
        let f = dft_peak_hz(&s.samples[1000..31000], 16000.0);
        assert!((f - 1000.0).abs() <= 1.0, "peak at {f} Hz");
    }

    #[test]
    fn upsampled_sine_keeps_frequency() {
        let w = sine(1500.0, 8000, 1.0, 0.5);
        let s = standardize(&w).unwrap();
        assert_eq!(s.len(), 16000);
        let f = dft_peak_hz(&s.samples[500..15500], 16000.0);
        assert!((f - 1500.0).abs() <= 1.5, "peak at {f} Hz");
    }

    #[test]
    fn silence_stays_silent() {
        let w = Waveform::new(vec![0.0; 4410], 44100).unwrap();
        let s = standardize(&w).unwrap();
        assert!(s.samples.iter().all(|&v| v == 0.0));
        assert_eq!(s.len(), 1600);
    }

    #[test]
    fn empty_is_domain_error() {
        let w = Waveform::new(vec![], 16000).unwrap();
        assert!(matches!(standardize(&w), Err(Error::Domain(_))));
    }

    #[test]
    fn aliasing_tone_is_suppressed() {
        // 7.5 kHz at 32 kHz is inside the new band edge region; 12 kHz is
        // above the new Nyquist and must be attenuated.
        let w = sine(12000.0, 32000, 1.0, 1.0);
        let s = resample(&w, 16000).unwrap();
        let rms = (s.samples[200..15800].iter().map(|v| v * v).sum::<f64>() / 15600.0).sqrt();
        assert!(rms < 0.01, "alias rms {rms}");
    }
}
