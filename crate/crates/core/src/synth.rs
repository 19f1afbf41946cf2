//! Deterministic synthetic sound-event corpus.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::augment::{Manifest, ManifestEntry, Origin};
use crate::dsp::{write_wav_pcm16, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stage, Rng};

const FS: f64 = SAMPLE_RATE as f64;
/// Peak level of written clips.
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Tone,
    Chirp,
    NoiseBurst,
    AmNoise,
    ClickTrain,
    Square,
    Surf,
    Impulse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventClassDef {
    pub class_id: u32,
    pub name: &'static str,
    pub kind: GeneratorKind,
    /// Characteristic frequency range in Hz; its meaning depends on `kind`.
    pub f0_range: (f64, f64),
    /// Clip duration range in seconds.
    pub duration_range: (f64, f64),
    /// Fraction of the clip covered by the event.
    pub coverage_range: (f64, f64),
    pub snr_db_range: (f64, f64),
}

impl EventClassDef {
    fn new(class_id: u32, name: &'static str, kind: GeneratorKind, f0_range: (f64, f64)) -> Self {
        Self {
            class_id,
            name,
            kind,
            f0_range,
            duration_range: (3.0, 8.0),
            coverage_range: (0.75, 0.95),
            snr_db_range: (20.0, 30.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(ok(self.f0_range) && ok(self.duration_range) && ok(self.coverage_range) && ok(self.snr_db_range))
            || self.duration_range.0 <= 0.0
            || self.coverage_range.0 <= 0.0
            || self.coverage_range.1 > 1.0
            || self.f0_range.1 >= FS / 2.0
        {
            return Err(Error::Config(format!("bad parameter ranges for class {}", self.name)));
        }
        Ok(())
    }
}

/// The eight default classes.
pub fn default_classes() -> Vec<EventClassDef> {
    use GeneratorKind::*;
    vec![
        EventClassDef::new(0, "tone", Tone, (300.0, 600.0)),
        EventClassDef::new(1, "chirp", Chirp, (400.0, 800.0)),
        EventClassDef::new(2, "noise_burst", NoiseBurst, (0.0, 0.0)),
        EventClassDef::new(3, "am_noise", AmNoise, (4.0, 12.0)),
        EventClassDef::new(4, "click_train", ClickTrain, (8.0, 20.0)),
        EventClassDef::new(5, "square", Square, (1200.0, 2000.0)),
        EventClassDef::new(6, "surf", Surf, (300.0, 800.0)),
        EventClassDef::new(7, "impulse", Impulse, (100.0, 250.0)),
    ]
}

fn uniform(rng: &mut Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.gen_range(a..b)
    }
}

fn noise(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two cascaded one-pole low-pass sections.
fn lowpass(x: &mut [f64], cutoff: f64) {
    let a = 1.0 - (-2.0 * PI * cutoff / FS).exp();
    for _ in 0..2 {
        let mut y = 0.0;
        for v in x.iter_mut() {
            y += a * (*v - y);
            *v = y;
        }
    }
}

/// Raw event signal of `n` samples.
pub fn generate_event(kind: GeneratorKind, f0_range: (f64, f64), n: usize, rng: &mut Rng) -> Vec<f64> {
    let t = |i: usize| i as f64 / FS;
    match kind {
        GeneratorKind::Tone => {
            let f0 = uniform(rng, f0_range);
            let ph = rng.gen_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let w = 2.0 * PI * f0 * t(i) + ph;
                    w.sin() + 0.5 * (2.0 * w).sin() + 0.25 * (3.0 * w).sin()
                })
                .collect()
        }
        GeneratorKind::Chirp => {
            let f_lo = uniform(rng, f0_range);
            let f_hi = rng.gen_range(2500.0..4000.0);
            let period = rng.gen_range(0.4..0.8);
            (0..n)
                .map(|i| {
                    let tau = t(i) % period;
                    (2.0 * PI * (f_lo * tau + (f_hi - f_lo) * tau * tau / (2.0 * period))).sin()
                })
                .collect()
        }
        GeneratorKind::NoiseBurst => {
            let mut out = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let on = (rng.gen_range(0.08..0.2) * FS) as usize;
                let off = (rng.gen_range(0.08..0.2) * FS) as usize;
                for v in out.iter_mut().skip(i).take(on) {
                    *v = noise(rng);
                }
                i += on + off;
            }
            out
        }
        GeneratorKind::AmNoise => {
            let fm = uniform(rng, f0_range);
            (0..n).map(|i| noise(rng) * 0.5 * (1.0 + (2.0 * PI * fm * t(i)).sin())).collect()
        }
        GeneratorKind::ClickTrain => {
            let rate = uniform(rng, f0_range);
            let step = (FS / rate) as usize;
            let len = (0.004 * FS) as usize;
            let mut out = vec![0.0; n];
            for start in (0..n).step_by(step.max(1)) {
                for k in 0..len.min(n - start) {
                    out[start + k] = noise(rng) * (-(k as f64) / (0.001 * FS)).exp();
                }
            }
            out
        }
        GeneratorKind::Square => {
            let f0 = uniform(rng, f0_range);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let harmonics: Vec<f64> = (0..).map(|k| (2 * k + 1) as f64).take_while(|&h| h * f0 < FS / 2.0).collect();
            (0..n)
                .map(|i| {
                    let w = 2.0 * PI * f0 * t(i) + ph;
                    harmonics.iter().map(|&h| (h * w).sin() / h).sum::<f64>()
                })
                .collect()
        }
        GeneratorKind::Surf => {
            let cutoff = uniform(rng, f0_range);
            let swell = rng.gen_range(0.2..0.5);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let mut x: Vec<f64> = (0..n).map(|_| noise(rng)).collect();
            lowpass(&mut x, cutoff);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 0.6 + 0.4 * (2.0 * PI * swell * t(i) + ph).sin();
            }
            x
        }
        GeneratorKind::Impulse => {
            let f = uniform(rng, f0_range);
            let mut out = vec![0.0; n];
            let mut start = (rng.gen_range(0.0..0.3) * FS) as usize;
            let len = (0.15 * FS) as usize;
            while start < n {
                for k in 0..len.min(n - start) {
                    let tk = k as f64 / FS;
                    out[start + k] = (2.0 * PI * f * tk).sin() * (-tk / 0.03).exp();
                }
                start += (rng.gen_range(0.4..0.9) * FS) as usize;
            }
            out
        }
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Embed `event` at `onset` in white background noise of `len` samples at
/// the given SNR (event power over its span against noise power), then scale
/// to the corpus peak level.
pub fn embed_event(event: &[f64], onset: usize, len: usize, snr_db: f64, rng: &mut Rng) -> Vec<f64> {
    let p_event = power(event).max(1e-12);
    let sigma = (p_event / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut out: Vec<f64> = (0..len).map(|_| sigma * noise(rng)).collect();
    for (o, &e) in out[onset..].iter_mut().zip(event) {
        *o += e;
    }
    scale_to_peak(&mut out);
    out
}

fn scale_to_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
}

/// One clip of `class`. Deterministic in `rng`.
pub fn synth_clip(class: &EventClassDef, rng: &mut Rng) -> Waveform {
    let len = (uniform(rng, class.duration_range) * FS).round() as usize;
    let ev_len = ((uniform(rng, class.coverage_range) * len as f64).round() as usize).clamp(1, len);
    let onset = rng.gen_range(0..=len - ev_len);
    let snr = uniform(rng, class.snr_db_range);
    let event = generate_event(class.kind, class.f0_range, ev_len, rng);
    Waveform {
        samples: embed_event(&event, onset, len, snr, rng),
        sample_rate: SAMPLE_RATE,
    }
}

/// Directory, relative to the corpus root, holding clip audio.
pub const CLIP_DIR: &str = "clips";

/// Write `clips_per_class` clips per class under `out_dir` and return the
/// manifest (paths relative to `out_dir`). Clip `k` of the corpus draws
/// from its own seed stream.
pub fn synth_corpus(classes: &[EventClassDef], clips_per_class: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if clips_per_class < 2 {
        return Err(Error::Config("need at least 2 clips per class".into()));
    }
    if classes.is_empty() {
        return Err(Error::Config("no classes".into()));
    }
    for c in classes {
        c.validate()?;
    }
    let dir = out_dir.join(CLIP_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let jobs: Vec<(usize, &EventClassDef, usize)> = classes
        .iter()
        .flat_map(|c| (0..clips_per_class).map(move |k| (c, k)))
        .enumerate()
        .map(|(i, (c, k))| (i, c, k))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(i, class, k)| {
            let mut rng = rng_for(seed, stage::SYNTH, i as u64);
            let w = synth_clip(class, &mut rng);
            let clip_id = format!("{}_{k:03}", class.name);
            let path = format!("{CLIP_DIR}/{clip_id}.wav");
            write_wav_pcm16(&out_dir.join(&path), &w)?;
            Ok(ManifestEntry {
                clip_id,
                path,
                class_id: class.class_id,
                origin: Origin::Raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest { entries })
}

/// Seconds per highlight moment.
pub const MOMENT_SECONDS: f64 = 2.0;

/// One labeled moment of a synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentLabel {
    pub video_id: String,
    pub moment_id: usize,
    pub label: bool,
    pub t_start: f64,
    pub t_end: f64,
}

impl MomentLabel {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.3}\t{:.3}",
            self.video_id, self.moment_id, self.label as u8, self.t_start, self.t_end
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("bad moment label line {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            video_id: f[0].to_string(),
            moment_id: f[1].parse().map_err(|_| bad())?,
            label: match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
            t_start: f[3].parse().map_err(|_| bad())?,
            t_end: f[4].parse().map_err(|_| bad())?,
        })
    }
}

pub fn read_moment_labels(path: &Path) -> Result<Vec<MomentLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(MomentLabel::parse_line).collect()
}

pub fn write_moment_labels(path: &Path, labels: &[MomentLabel]) -> Result<()> {
    let text: String = labels.iter().map(|l| l.to_line() + "\n").collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Directory, relative to the highlight-set root, holding video audio.
pub const VIDEO_DIR: &str = "videos";

/// Audio and moment labels of one synthetic video. Positive moments carry
/// an event of `event` over most of their span; negative moments carry only
/// background noise.
pub fn synth_video(event: &EventClassDef, video_id: &str, moments: usize, positive_rate: f64, rng: &mut Rng) -> (Waveform, Vec<MomentLabel>) {
    let n_pos = ((positive_rate * moments as f64).round() as usize).clamp(1, moments.saturating_sub(1).max(1));
    let mut order: Vec<usize> = (0..moments).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], rng);
    let mut positive = vec![false; moments];
    order.iter().take(n_pos).for_each(|&i| positive[i] = true);

    let m_len = (MOMENT_SECONDS * FS).round() as usize;
    let snr = uniform(rng, event.snr_db_range);
    let mut samples = Vec::with_capacity(m_len * moments);
    let mut labels = Vec::with_capacity(moments);
    // Events are scaled to power 0.5; the background sits `snr` dB below.
    let sigma = 10f64.powf(-snr / 20.0) * 0.5f64.sqrt();
    for (k, &pos) in positive.iter().enumerate() {
        let mut chunk: Vec<f64> = (0..m_len).map(|_| sigma * noise(rng)).collect();
        if pos {
            let ev_len = (rng.gen_range(0.75..0.95) * m_len as f64) as usize;
            let onset = rng.gen_range(0..=m_len - ev_len);
            let ev = generate_event(event.kind, event.f0_range, ev_len, rng);
            let gain = (0.5 / power(&ev).max(1e-12)).sqrt();
            for (c, e) in chunk[onset..].iter_mut().zip(&ev) {
                *c += gain * e;
            }
        }
        samples.extend(chunk);
        labels.push(MomentLabel {
            video_id: video_id.to_string(),
            moment_id: k,
            label: pos,
            t_start: k as f64 * MOMENT_SECONDS,
            t_end: (k + 1) as f64 * MOMENT_SECONDS,
        });
    }
    scale_to_peak(&mut samples);
    (Waveform { samples, sample_rate: SAMPLE_RATE }, labels)
}

/// Write `videos` synthetic videos under `out_dir` and return the moment
/// labels.
pub fn synth_highlight_set(
    event: &EventClassDef,
    videos: usize,
    moments_per_video: usize,
    positive_rate: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<MomentLabel>> {
    if !(positive_rate > 0.0 && positive_rate < 1.0) {
        return Err(Error::Config(format!("positive rate {positive_rate} outside (0, 1)")));
    }
    if moments_per_video < 2 {
        return Err(Error::Config("need at least 2 moments per video".into()));
    }
    event.validate()?;
    let dir = out_dir.join(VIDEO_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let per_video = (0..videos)
        .into_par_iter()
        .map(|v| {
            let mut rng = rng_for(seed, stage::HIGHLIGHT, v as u64);
            let id = format!("v{v:03}");
            let (w, labels) = synth_video(event, &id, moments_per_video, positive_rate, &mut rng);
            write_wav_pcm16(&dir.join(format!("{id}.wav")), &w)?;
            Ok(labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{load_wav, standardize};
    use crate::rng::seeded;
    use crate::test_util::dft_peak_hz;

    #[test]
    fn corpus_is_balanced_and_reproducible() {
        let classes = default_classes();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&classes, 2, 5, a.path()).unwrap();
        let mb = synth_corpus(&classes, 2, 5, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.len(), 16);
        assert!(ma.class_counts().values().all(|&c| c == 2));
        for e in &ma.entries {
            let x = std::fs::read(e.resolve(a.path())).unwrap();
            let y = std::fs::read(e.resolve(b.path())).unwrap();
            assert_eq!(x, y, "{}", e.clip_id);
            let w = standardize(&load_wav(&e.resolve(a.path())).unwrap()).unwrap();
            assert!((3.0..=8.0).contains(&w.duration()));
        }
    }

    #[test]
    fn tone_peak_in_class_range() {
        let class = &default_classes()[0];
        for s in 0..3 {
            let w = synth_clip(class, &mut seeded(s));
            // Loudest half second lies inside the event.
            let best = (0..w.samples.len() - 8000)
                .step_by(4000)
                .max_by(|&i, &j| power(&w.samples[i..i + 8000]).total_cmp(&power(&w.samples[j..j + 8000])))
                .unwrap();
            let f = dft_peak_hz(&w.samples[best..best + 8000], FS);
            assert!((class.f0_range.0..=class.f0_range.1).contains(&f), "{f}");
        }
    }

    #[test]
    fn highlight_set_layout() {
        let class = &default_classes()[0];
        let (w, labels) = synth_video(class, "v", 8, 0.25, &mut seeded(2));
        assert_eq!(labels.iter().filter(|l| l.label).count(), 2);
        assert_eq!(w.len(), 8 * 32000);
        let (w2, labels2) = synth_video(class, "v", 8, 0.25, &mut seeded(2));
        assert_eq!((w.samples, labels), (w2.samples, labels2));
    }

    #[test]
    fn positives_carry_more_event_band_energy() {
        let class = &default_classes()[0];
        let (w, labels) = synth_video(class, "v", 8, 0.25, &mut seeded(9));
        let band = |x: &[f64]| -> f64 {
            (300..=1800).step_by(50).map(|f| crate::test_util::dtft_mag(&x[..4000], f as f64, FS).powi(2)).sum()
        };
        let energies: Vec<(bool, f64)> = labels
            .iter()
            .map(|l| {
                let s = (l.t_start * FS) as usize;
                let chunk = &w.samples[s..s + 32000];
                let e = (0..8).map(|k| band(&chunk[k * 4000..])).sum::<f64>();
                (l.label, e)
            })
            .collect();
        let min_pos = energies.iter().filter(|e| e.0).map(|e| e.1).fold(f64::MAX, f64::min);
        let max_neg = energies.iter().filter(|e| !e.0).map(|e| e.1).fold(0.0, f64::max);
        assert!(min_pos > max_neg);
    }

    #[test]
    fn label_lines_round_trip() {
        let l = MomentLabel { video_id: "v001".into(), moment_id: 3, label: true, t_start: 6.0, t_end: 8.0 };
        assert_eq!(MomentLabel::parse_line(&l.to_line()).unwrap(), l);
        assert!(MomentLabel::parse_line("v\t1\t2\t0\t1").is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = tempfile::tempdir().unwrap();
        assert!(synth_corpus(&default_classes(), 1, 0, d.path()).is_err());
        assert!(synth_highlight_set(&default_classes()[0], 2, 8, 1.0, 0, d.path()).is_err());
    }
}
