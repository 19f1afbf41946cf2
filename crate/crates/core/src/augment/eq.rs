use std::f64::consts::PI;

use rand::Rng as _;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const F0_RANGE: (f64, f64) = (100.0, 6000.0);
pub const GAIN_RANGE_DB: (f64, f64) = (-8.0, 8.0);
pub const Q_RANGE: (f64, f64) = (1.0, 9.0);

/// Peaking equalizer settings `(f0, g, Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqParams {
    pub f0: f64,
    pub gain_db: f64,
    pub q: f64,
}

impl EqParams {
    pub fn new(f0: f64, gain_db: f64, q: f64) -> Result<Self> {
        let p = Self { f0, gain_db, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if inside(self.f0, F0_RANGE) && inside(self.gain_db, GAIN_RANGE_DB) && inside(self.q, Q_RANGE) {
            Ok(())
        } else {
            Err(Error::domain(format!("EQ parameters out of range: {self:?}")))
        }
    }

    /// Uniform draw from the legal box.
    pub fn draw(rng: &mut Rng) -> Self {
        Self {
            f0: rng.gen_range(F0_RANGE.0..F0_RANGE.1),
            gain_db: rng.gen_range(GAIN_RANGE_DB.0..GAIN_RANGE_DB.1),
            q: rng.gen_range(Q_RANGE.0..Q_RANGE.1),
        }
    }

    pub fn flat() -> Self {
        Self {
            f0: 1000.0,
            gain_db: 0.0,
            q: 1.0,
        }
    }
}

/// Second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    pub const IDENTITY: Self = Self {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Complex response at `freq` Hz as `(re, im)`.
    pub fn response(&self, freq: f64, sample_rate: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq / sample_rate;
        let (c1, s1, c2, s2) = (w.cos(), -w.sin(), (2.0 * w).cos(), -(2.0 * w).sin());
        let (nr, ni) = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let (dr, di) = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }

    pub fn magnitude_db(&self, freq: f64, sample_rate: f64) -> f64 {
        let (re, im) = self.response(freq, sample_rate);
        10.0 * (re * re + im * im).log10()
    }
}

/// Constant-Q peaking equalizer ("audio EQ cookbook" form).
pub fn design_peaking_eq(p: &EqParams, sample_rate: f64) -> Result<BiquadCoeffs> {
    if !(p.f0 > 0.0 && p.f0 < sample_rate / 2.0) {
        return Err(Error::domain(format!(
            "center {} Hz outside (0, {}) Hz",
            p.f0,
            sample_rate / 2.0
        )));
    }
    if !(p.q > 0.0) {
        return Err(Error::domain("Q must be positive"));
    }
    let a = 10f64.powf(p.gain_db / 40.0);
    let w = 2.0 * PI * p.f0 / sample_rate;
    let alpha = w.sin() / (2.0 * p.q);
    let cos_w = w.cos();
    let a0 = 1.0 + alpha / a;
    Ok(BiquadCoeffs {
        b0: (1.0 + alpha * a) / a0,
        b1: -2.0 * cos_w / a0,
        b2: (1.0 - alpha * a) / a0,
        a1: -2.0 * cos_w / a0,
        a2: (1.0 - alpha / a) / a0,
    })
}

/// Filter with a transposed direct-form-II biquad from zero state.
pub fn apply_eq(w: &Waveform, c: &BiquadCoeffs) -> Waveform {
    let (mut z1, mut z2) = (0.0, 0.0);
    let samples = w
        .samples
        .iter()
        .map(|&x| {
            let y = c.b0 * x + z1;
            z1 = c.b1 * x - c.a1 * y + z2;
            z2 = c.b2 * x - c.a2 * y;
            y
        })
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}
