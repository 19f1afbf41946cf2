use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureMaps, FrameFeatures, Waveform, FRAME_HOP, FRAME_LEN, N_BANDS, N_MAPS, N_MEL, SAMPLE_RATE};
use crate::error::{Error, Result};

/// DFT length; each 400-sample frame is zero-padded to this size.
pub const FFT_SIZE: usize = 512;
/// Energies are clamped to this value before taking the log.
pub const LOG_FLOOR: f64 = 1e-10;
/// Upper knee of the VTLP warp; frequencies above it are squeezed so the
/// Nyquist frequency maps to itself.
const VTLP_KNEE_HZ: f64 = 4800.0;
const DELTA_WINDOW: usize = 2;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Short-time power spectra plus per-frame log energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub n_frames: usize,
    /// `FFT_SIZE / 2 + 1`.
    pub n_bins: usize,
    /// Row-major `[n_frames × n_bins]`.
    pub power: Vec<f64>,
    pub log_energy: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.power[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Hann-windowed 512-point power spectra of 25 ms frames with a 10 ms hop.
pub fn power_spectrogram(w: &Waveform) -> Result<PowerSpectrogram> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::domain(format!(
            "filterbank expects {SAMPLE_RATE} Hz input, got {}",
            w.sample_rate
        )));
    }
    let n_frames = super::frame_count(w.len());
    if n_frames == 0 {
        return Err(Error::domain(format!(
            "{} samples is shorter than one {FRAME_LEN}-sample frame",
            w.len()
        )));
    }
    let n_bins = FFT_SIZE / 2 + 1;
    let window = hann(FRAME_LEN);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = Vec::with_capacity(n_frames * n_bins);
    let mut log_energy = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let frame = &w.samples[t * FRAME_HOP..t * FRAME_HOP + FRAME_LEN];
        let energy: f64 = frame.iter().map(|s| s * s).sum();
        log_energy.push(energy.max(LOG_FLOOR).ln());
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < FRAME_LEN {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        power.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrogram {
        n_frames,
        n_bins,
        power,
        log_energy,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Triangle {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Triangular filters over DFT bins, defined by `n + 2` edge frequencies:
/// filter `j` rises from edge `j` to a peak at edge `j + 1` and falls to
/// zero at edge `j + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    edges_hz: Vec<f64>,
    filters: Vec<Triangle>,
    sample_rate: u32,
    n_fft: usize,
}

impl MelFilterbank {
    /// 49 HTK-style filters spanning 0–8000 Hz for 16 kHz input.
    pub fn standard() -> Self {
        Self::new(N_MEL, 0.0, SAMPLE_RATE as f64 / 2.0, SAMPLE_RATE, FFT_SIZE)
    }

    /// Filters equally spaced on the mel scale between `f_lo` and `f_hi`.
    pub fn new(n_filters: usize, f_lo: f64, f_hi: f64, sample_rate: u32, n_fft: usize) -> Self {
        let (m_lo, m_hi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
        let edges = (0..n_filters + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        Self::from_edges(edges, sample_rate, n_fft)
    }

    pub fn from_edges(edges_hz: Vec<f64>, sample_rate: u32, n_fft: usize) -> Self {
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = edges_hz
            .windows(3)
            .map(|e| {
                let (lo, c, hi) = (e[0], e[1], e[2]);
                let weight = |k: usize| {
                    let f = k as f64 * bin_hz;
                    if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    }
                };
                let first_bin = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(0);
                let last_bin = (0..n_bins).rev().find(|&k| weight(k) > 0.0).unwrap_or(0);
                Triangle {
                    first_bin,
                    weights: (first_bin..=last_bin).map(weight).collect(),
                }
            })
            .collect();
        Self {
            edges_hz,
            filters,
            sample_rate,
            n_fft,
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges_hz
    }

    /// Peak frequency of each filter.
    pub fn centers(&self) -> Vec<f64> {
        self.edges_hz[1..self.edges_hz.len() - 1].to_vec()
    }

    /// Sum of each filter's bin weights.
    pub fn weight_sums(&self) -> Vec<f64> {
        self.filters.iter().map(|f| f.weights.iter().sum()).collect()
    }

    /// Same filterbank with every edge frequency moved by the VTLP warp.
    pub fn warped(&self, warp: f64) -> Result<Self> {
        if !(warp > 0.0) {
            return Err(Error::domain(format!("warp factor {warp} must be positive")));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let edges = self
            .edges_hz
            .iter()
            .map(|&f| vtlp_warp_frequency(f, warp, nyquist))
            .collect();
        Ok(Self::from_edges(edges, self.sample_rate, self.n_fft))
    }

    /// Filter energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                f.weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

/// Piecewise-linear VTLP frequency map.
///
/// Below the boundary `4800 * min(warp, 1) / warp` frequencies scale by
/// `warp`; above it a second linear piece pins the Nyquist frequency. With
/// this boundary the maps for `warp` and `1 / warp` are exact inverses.
pub fn vtlp_warp_frequency(f: f64, warp: f64, nyquist: f64) -> f64 {
    if warp == 1.0 {
        return f;
    }
    let boundary = VTLP_KNEE_HZ * warp.min(1.0) / warp;
    if f <= boundary {
        f * warp
    } else {
        nyquist - (nyquist - warp * boundary) * (nyquist - f) / (nyquist - boundary)
    }
}

/// Log filterbank energies with the log frame energy as the last column.
pub fn apply_filterbank(spec: &PowerSpectrogram, bank: &MelFilterbank) -> FrameFeatures {
    let mut values = Vec::with_capacity(spec.n_frames * (bank.len() + 1));
    for t in 0..spec.n_frames {
        values.extend(bank.apply(spec.frame(t)).into_iter().map(|e| e.max(LOG_FLOOR).ln()));
        values.push(spec.log_energy[t]);
    }
    FrameFeatures {
        n_frames: spec.n_frames,
        values,
    }
}

/// 49 log mel energies plus log energy per 25 ms frame.
pub fn log_mel_filterbank(w: &Waveform) -> Result<FrameFeatures> {
    Ok(apply_filterbank(&power_spectrogram(w)?, &MelFilterbank::standard()))
}

/// Filterbank features computed with VTLP-warped filters.
pub fn vtlp_warp(spec: &PowerSpectrogram, warp: f64) -> Result<FrameFeatures> {
    if !(0.9..=1.1).contains(&warp) {
        return Err(Error::domain(format!("warp {warp} outside [0.9, 1.1]")));
    }
    Ok(apply_filterbank(spec, &MelFilterbank::standard().warped(warp)?))
}

/// Regression delta over a `±2` frame window with edge frames replicated.
fn delta(src: &[f64], n_frames: usize, out: &mut [f64]) {
    let denom = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let last = n_frames as isize - 1;
    for t in 0..n_frames as isize {
        let mut acc = 0.0;
        for n in 1..=DELTA_WINDOW as isize {
            let ahead = src[(t + n).min(last) as usize];
            let behind = src[(t - n).max(0) as usize];
            acc += n as f64 * (ahead - behind);
        }
        out[t as usize] = acc / denom;
    }
}

/// Stack static, delta and delta-delta maps into a `[3 × 50 × T]` tensor.
pub fn add_deltas(f: &FrameFeatures) -> Result<FeatureMaps> {
    let t = f.n_frames;
    if t < 2 * DELTA_WINDOW + 1 {
        return Err(Error::domain(format!("{t} frames, need at least 5 for deltas")));
    }
    let mut maps = vec![0.0f64; N_MAPS * N_BANDS * t];
    for b in 0..N_BANDS {
        let base = b * t;
        for (i, slot) in maps[base..base + t].iter_mut().enumerate() {
            *slot = f.get(i, b);
        }
    }
    let (statics, rest) = maps.split_at_mut(N_BANDS * t);
    let (deltas, accels) = rest.split_at_mut(N_BANDS * t);
    for b in 0..N_BANDS {
        let r = b * t..(b + 1) * t;
        delta(&statics[r.clone()], t, &mut deltas[r.clone()]);
        delta(&deltas[r.clone()], t, &mut accels[r]);
    }
    Ok(FeatureMaps {
        n_frames: t,
        data: maps.into_iter().map(|v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64) -> Waveform {
        let n = (secs * 16000.0) as usize;
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
            16000,
        )
        .unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
            .0
    }

    fn nearest(centers: &[f64], f: f64) -> usize {
        argmax(&centers.iter().map(|c| -(c - f).abs()).collect::<Vec<_>>())
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filterbank_geometry() {
        let bank = MelFilterbank::standard();
        assert_eq!(bank.len(), 49);
        let c = bank.centers();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
        let mels: Vec<f64> = c.iter().map(|&f| hz_to_mel(f)).collect();
        assert!(mels.windows(2).all(|w| w[1] > w[0]));
        assert!(bank.weight_sums().iter().all(|&s| s > 0.0));
        assert_eq!(bank.edges()[0], 0.0);
        assert!((bank.edges()[50] - 8000.0).abs() < 1e-9);
    }

    #[test]
    fn four_seconds_gives_400_frames() {
        let samples = (0..64_240).map(|i| (i as f64 * 0.17).sin()).collect();
        let f = log_mel_filterbank(&Waveform::new(samples, 16000).unwrap()).unwrap();
        assert_eq!(f.n_frames, 400);
        assert_eq!(f.values.len(), 400 * 50);
    }

    #[test]
    fn tone_peaks_in_nearest_band() {
        let bank = MelFilterbank::standard();
        let expect = nearest(&bank.centers(), 1000.0);
        let f = log_mel_filterbank(&tone(1000.0, 0.5)).unwrap();
        for t in 0..f.n_frames {
            assert_eq!(argmax(&f.row(t)[..49]), expect, "frame {t}");
        }
    }

    #[test]
    fn silence_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let f = log_mel_filterbank(&w).unwrap();
        assert!(f.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn short_or_wrong_rate_rejected() {
        assert!(log_mel_filterbank(&Waveform::new(vec![0.1; 399], 16000).unwrap()).is_err());
        assert!(log_mel_filterbank(&Waveform::new(vec![0.1; 4000], 8000).unwrap()).is_err());
    }

    #[test]
    fn unit_warp_is_identity() {
        let w = tone(1234.0, 0.3);
        let spec = power_spectrogram(&w).unwrap();
        assert_eq!(vtlp_warp(&spec, 1.0).unwrap(), log_mel_filterbank(&w).unwrap());
    }

    #[test]
    fn warp_moves_tone_band() {
        let centers = MelFilterbank::standard().centers();
        let spec = power_spectrogram(&tone(2000.0, 0.3)).unwrap();
        let warped = vtlp_warp(&spec, 1.1).unwrap();
        let plain = apply_filterbank(&spec, &MelFilterbank::standard());
        let expect = nearest(&centers, 2000.0 / 1.1);
        for t in 0..warped.n_frames {
            assert_eq!(argmax(&warped.row(t)[..49]), expect);
            assert!(argmax(&plain.row(t)[..49]) > expect);
        }
    }

    #[test]
    fn warp_inverse_restores_centers() {
        let bank = MelFilterbank::standard();
        let back = bank.warped(0.9).unwrap().warped(1.0 / 0.9).unwrap();
        for (a, b) in bank.centers().iter().zip(back.centers()) {
            assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
        }
        assert!((vtlp_warp_frequency(8000.0, 0.9, 8000.0) - 8000.0).abs() < 1e-9);
        assert!((vtlp_warp_frequency(8000.0, 1.1, 8000.0) - 8000.0).abs() < 1e-9);
    }

    #[test]
    fn warp_range_enforced() {
        let spec = power_spectrogram(&tone(500.0, 0.1)).unwrap();
        assert!(vtlp_warp(&spec, 0.85).is_err());
        assert!(vtlp_warp(&spec, 1.2).is_err());
    }

    fn features_from_columns(cols: impl Fn(usize, usize) -> f64, n: usize) -> FrameFeatures {
        let mut values = Vec::new();
        for t in 0..n {
            for b in 0..N_BANDS {
                values.push(cols(t, b));
            }
        }
        FrameFeatures { n_frames: n, values }
    }

    #[test]
    fn constant_features_have_zero_deltas() {
        let f = features_from_columns(|_, b| b as f64 * 0.37 - 3.0, 12);
        let m = add_deltas(&f).unwrap();
        for map in 1..3 {
            for b in 0..N_BANDS {
                for t in 0..12 {
                    assert_eq!(m.get(map, b, t), 0.0);
                }
            }
        }
    }

    #[test]
    fn linear_ramp_delta_equals_slope() {
        let a = 0.75;
        let m = add_deltas(&features_from_columns(|t, _| a * t as f64, 20)).unwrap();
        for t in 2..18 {
            assert!((m.get(1, 7, t) as f64 - a).abs() < 1e-6);
            // Second derivative of a ramp vanishes away from the edges.
            if (4..16).contains(&t) {
                assert!(m.get(2, 7, t).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn impulse_delta_is_antisymmetric() {
        let m = add_deltas(&features_from_columns(|t, _| if t == 10 { 1.0 } else { 0.0 }, 21)).unwrap();
        // Direct 5-point stencil: d_t = (c_{t+1} - c_{t-1} + 2(c_{t+2} - c_{t-2})) / 10.
        let expect = [(8, 0.2), (9, 0.1), (10, 0.0), (11, -0.1), (12, -0.2)];
        for (t, v) in expect {
            assert!((m.get(1, 0, t) as f64 - v).abs() < 1e-7, "t={t}");
        }
        for k in 1..=3 {
            assert_eq!(m.get(1, 0, 10 - k), -m.get(1, 0, 10 + k));
        }
    }

    #[test]
    fn too_few_frames_for_deltas() {
        assert!(add_deltas(&features_from_columns(|_, _| 0.0, 4)).is_err());
    }
}
