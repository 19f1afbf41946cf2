//! Independent oracles for unit tests.

use std::f64::consts::PI;

/// Magnitude of the Hann-windowed DTFT of `x` at `freq` Hz, by direct sum.
pub fn dtft_mag(x: &[f64], freq: f64, rate: f64) -> f64 {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        let ph = 2.0 * PI * freq * i as f64 / rate;
        re += w * v * ph.cos();
        im -= w * v * ph.sin();
    }
    (re * re + im * im).sqrt()
}

/// Frequency of the largest spectral peak: 1 Hz grid search, then a
/// 0.01 Hz refinement around the winner.
pub fn dft_peak_hz(x: &[f64], rate: f64) -> f64 {
    let argmax = |freqs: &mut dyn Iterator<Item = f64>| {
        freqs
            .map(|f| (f, dtft_mag(x, f, rate)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    };
    let coarse = argmax(&mut (1..(rate / 2.0) as usize).map(|f| f as f64));
    argmax(&mut (-100..=100).map(|k| coarse + k as f64 * 0.01))
}
