//! Audio frontend: WAV input, resampling to 16 kHz, silence trimming, and
//! the 3-map log-filterbank representation the networks consume.
//!
//! Feature geometry: 25 ms frames (400 samples) with a 10 ms hop (160
//! samples) at 16 kHz, 49 mel bands plus one log-energy row, and
//! static/delta/delta-delta maps.

mod container;
mod mel;
mod patch;
mod resample;
mod silence;
mod wav;

pub use container::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, TENSOR_MAGIC};
pub use mel::{
    add_deltas, apply_filterbank, hz_to_mel, log_mel_filterbank, mel_to_hz, power_spectrogram,
    vtlp_warp, vtlp_warp_frequency, MelFilterbank, PowerSpectrogram, FFT_SIZE, LOG_FLOOR,
};
pub use patch::{crop_patch, patch_stream};
pub use resample::{resample, standardize};
pub use silence::{split_long, trim_silence};
pub use wav::{load_wav, write_wav_pcm16};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 400;
pub const FRAME_HOP: usize = 160;
pub const N_MEL: usize = 49;
/// Rows per map: the mel bands plus log-energy.
pub const N_BANDS: usize = N_MEL + 1;
pub const N_MAPS: usize = 3;
/// Seconds per frame hop.
pub const FRAME_SECONDS: f64 = FRAME_HOP as f64 / SAMPLE_RATE as f64;

/// Mono sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Scale so the peak magnitude is 1. All-zero input is returned as is.
    pub fn peak_normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            for s in &mut self.samples {
                *s /= peak;
            }
        }
        self
    }
}

/// Per-frame static features: `n_frames` rows of 49 log mel energies
/// followed by the log frame energy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub n_frames: usize,
    /// Row-major `[n_frames × N_BANDS]`.
    pub values: Vec<f64>,
}

impl FrameFeatures {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * N_BANDS..(frame + 1) * N_BANDS]
    }

    pub fn get(&self, frame: usize, band: usize) -> f64 {
        self.values[frame * N_BANDS + band]
    }
}

/// Static, delta and delta-delta maps over a whole stream, stored
/// map-major, band-major, frame-minor: index `(m * N_BANDS + b) * n_frames + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub n_frames: usize,
    pub data: Vec<f32>,
}

impl FeatureMaps {
    pub fn get(&self, map: usize, band: usize, frame: usize) -> f32 {
        self.data[(map * N_BANDS + band) * self.n_frames + frame]
    }

    pub fn shape(&self) -> [usize; 3] {
        [N_MAPS, N_BANDS, self.n_frames]
    }
}

/// A fixed-length window cut from [`FeatureMaps`]; the network input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePatch {
    /// `[3 × 50 × frames]`, same ordering as [`FeatureMaps`].
    pub data: Vec<f32>,
    pub frames: usize,
    /// First source frame covered by the patch.
    pub start_frame: usize,
    /// Number of frames taken from the source before last-frame padding.
    pub valid_frames: usize,
    pub label: Option<u32>,
}

impl FeaturePatch {
    pub fn get(&self, map: usize, band: usize, frame: usize) -> f32 {
        self.data[(map * N_BANDS + band) * self.frames + frame]
    }

    pub fn t_start(&self) -> f64 {
        self.start_frame as f64 * FRAME_SECONDS
    }

    pub fn t_end(&self) -> f64 {
        (self.start_frame + self.frames) as f64 * FRAME_SECONDS
    }

    /// Standardize each map to zero mean and unit variance over the patch.
    ///
    /// Applied to every patch before it reaches a network, at train and
    /// test time alike.
    pub fn normalize_maps(&mut self) {
        normalize_maps(&mut self.data, self.frames);
    }
}

pub(crate) fn normalize_maps(data: &mut [f32], frames: usize) {
    let per_map = N_BANDS * frames;
    for map in data.chunks_mut(per_map) {
        let n = map.len() as f64;
        let mean = map.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = map.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let scale = 1.0 / (var.sqrt() + 1e-5);
        for v in map.iter_mut() {
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }
}

/// Frames produced for `n_samples` samples at the standard geometry.
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < FRAME_LEN {
        0
    } else {
        (n_samples - FRAME_LEN) / FRAME_HOP + 1
    }
}

/// Load, standardize and featurize a file in one go.
pub fn features_from_wav(path: &std::path::Path) -> Result<FeatureMaps> {
    let w = standardize(&load_wav(path)?)?;
    add_deltas(&log_mel_filterbank(&w)?)
}
