use rand::Rng as _;

use super::eq::{apply_eq, design_peaking_eq, EqParams};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One EMDA draw: mixing weight, delay fraction and the two equalizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmdaParams {
    pub alpha: f64,
    pub beta: f64,
    /// Maximum delay in seconds; `None` uses the duration of the first source.
    pub max_delay: Option<f64>,
    pub psi1: EqParams,
    pub psi2: EqParams,
}

impl EmdaParams {
    pub fn draw(rng: &mut Rng, max_delay: Option<f64>) -> Self {
        let alpha = rng.gen_range(0.0..1.0);
        let beta = rng.gen_range(0.0..1.0);
        let psi1 = EqParams::draw(rng);
        let psi2 = EqParams::draw(rng);
        Self {
            alpha,
            beta,
            max_delay,
            psi1,
            psi2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..1.0).contains(&self.beta) {
            return Err(Error::domain(format!(
                "alpha {} / beta {} out of range",
                self.alpha, self.beta
            )));
        }
        if matches!(self.max_delay, Some(t) if !(t >= 0.0)) {
            return Err(Error::domain("max delay must be non-negative"));
        }
        self.psi1.validate()?;
        self.psi2.validate()
    }
}

/// Mixing options that are not part of the random draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmdaConfig {
    pub max_delay: Option<f64>,
    /// Peak-normalize each source before mixing.
    pub normalize_sources: bool,
}

impl Default for EmdaConfig {
    fn default() -> Self {
        Self {
            max_delay: None,
            normalize_sources: true,
        }
    }
}

/// `alpha * EQ(s1, psi1) + (1 - alpha) * EQ(s2 delayed by beta * T, psi2)`,
/// peak-normalized.
pub fn emda_mix(s1: &Waveform, s2: &Waveform, p: &EmdaParams, normalize_sources: bool) -> Result<Waveform> {
    if s1.sample_rate != s2.sample_rate {
        return Err(Error::domain(format!(
            "sample rates differ: {} vs {}",
            s1.sample_rate, s2.sample_rate
        )));
    }
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::domain("EMDA sources must be non-empty"));
    }
    p.validate()?;
    let fs = s1.sample_rate as f64;
    let (a, b) = if normalize_sources {
        (s1.clone().peak_normalized(), s2.clone().peak_normalized())
    } else {
        (s1.clone(), s2.clone())
    };
    let a = apply_eq(&a, &design_peaking_eq(&p.psi1, fs)?);
    let b = apply_eq(&b, &design_peaking_eq(&p.psi2, fs)?);
    let max_delay = p.max_delay.unwrap_or(s1.duration());
    let delay = (p.beta * max_delay * fs).round() as usize;
    let len = a.len().max(delay + b.len());
    let mut out = vec![0.0; len];
    for (o, &x) in out.iter_mut().zip(&a.samples) {
        *o += p.alpha * x;
    }
    for (o, &x) in out[delay..].iter_mut().zip(&b.samples) {
        *o += (1.0 - p.alpha) * x;
    }
    Ok(Waveform::new(out, s1.sample_rate)?.peak_normalized())
}

/// Draw fresh parameters from `rng` and mix.
pub fn emda_sample(s1: &Waveform, s2: &Waveform, rng: &mut Rng, cfg: &EmdaConfig) -> Result<Waveform> {
    let p = EmdaParams::draw(rng, cfg.max_delay);
    emda_mix(s1, s2, &p, cfg.normalize_sources)
}
