use super::Waveform;
use crate::error::{Error, Result};

const WINDOW_SECONDS: f64 = 0.025;

/// Remove long silent stretches.
///
/// The signal is cut into consecutive 25 ms windows; a window is silent when
/// its RMS lies more than `|threshold_db|` below the peak sample magnitude.
/// Runs of silent windows lasting at least `min_gap_ms` are dropped, shorter
/// runs are kept.
pub fn trim_silence(w: &Waveform, threshold_db: f64, min_gap_ms: f64) -> Result<Waveform> {
    if threshold_db >= 0.0 || !threshold_db.is_finite() {
        return Err(Error::domain(format!("threshold {threshold_db} dB must be negative")));
    }
    let peak = w.peak();
    if peak == 0.0 {
        return Err(Error::AllSilent);
    }
    let win = ((WINDOW_SECONDS * w.sample_rate as f64).round() as usize).max(1);
    let limit = peak * 10f64.powf(threshold_db / 20.0);
    let silent: Vec<bool> = w
        .samples
        .chunks(win)
        .map(|c| (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).sqrt() < limit)
        .collect();
    let min_gap = (min_gap_ms / 1000.0 * w.sample_rate as f64).max(0.0);

    let mut keep = vec![true; silent.len()];
    let mut i = 0;
    while i < silent.len() {
        if !silent[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < silent.len() && silent[i] {
            i += 1;
        }
        let run_samples = (i * win).min(w.len()) - start * win;
        if run_samples as f64 >= min_gap {
            keep[start..i].iter_mut().for_each(|k| *k = false);
        }
    }
    let samples: Vec<f64> = w
        .samples
        .chunks(win)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    if samples.is_empty() {
        return Err(Error::AllSilent);
    }
    Waveform::new(samples, w.sample_rate)
}

/// Split into consecutive pieces that are each strictly shorter than
/// `max_sec`. All pieces share one length except possibly the last.
pub fn split_long(w: &Waveform, max_sec: f64) -> Result<Vec<Waveform>> {
    if !(max_sec > 0.0) {
        return Err(Error::domain("max_sec must be positive"));
    }
    let max_samples = max_sec * w.sample_rate as f64;
    if (w.len() as f64) < max_samples {
        return Ok(vec![w.clone()]);
    }
    let mut pieces = (w.len() as f64 / max_samples).floor() as usize + 1;
    let piece_len = loop {
        let len = w.len().div_ceil(pieces);
        if (len as f64) < max_samples {
            break len;
        }
        pieces += 1;
    };
    w.samples
        .chunks(piece_len.max(1))
        .map(|c| Waveform::new(c.to_vec(), w.sample_rate))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(secs: f64) -> Vec<f64> {
        (0..(secs * 16000.0) as usize)
            .map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn loud_signal_unchanged() {
        let w = Waveform::new(tone(1.0), 16000).unwrap();
        assert_eq!(trim_silence(&w, -60.0, 200.0).unwrap(), w);
    }

    #[test]
    fn interior_gap_removed() {
        let mut s = tone(1.0);
        s.extend(std::iter::repeat_n(0.0, 32000));
        s.extend(tone(1.0));
        let w = Waveform::new(s, 16000).unwrap();
        let t = trim_silence(&w, -60.0, 500.0).unwrap();
        assert!((t.duration() - 2.0).abs() <= 0.05, "{}", t.duration());
    }

    #[test]
    fn short_gap_kept() {
        let mut s = tone(0.5);
        s.extend(std::iter::repeat_n(0.0, 1600));
        s.extend(tone(0.5));
        let w = Waveform::new(s, 16000).unwrap();
        assert_eq!(trim_silence(&w, -60.0, 200.0).unwrap().len(), w.len());
    }

    #[test]
    fn all_zero_is_all_silent() {
        let w = Waveform::new(vec![0.0; 8000], 16000).unwrap();
        assert!(matches!(trim_silence(&w, -60.0, 200.0), Err(Error::AllSilent)));
    }

    #[test]
    fn positive_threshold_rejected() {
        let w = Waveform::new(tone(0.1), 16000).unwrap();
        assert!(trim_silence(&w, 3.0, 200.0).is_err());
    }

    #[test]
    fn split_lengths() {
        let short = Waveform::new(vec![0.1; 5 * 16000], 16000).unwrap();
        assert_eq!(split_long(&short, 12.0).unwrap(), vec![short.clone()]);

        let long = Waveform::new((0..25 * 16000).map(|i| i as f64 * 1e-7).collect(), 16000).unwrap();
        let pieces = split_long(&long, 12.0).unwrap();
        assert_eq!(pieces.len(), 3);
        assert!(pieces.iter().all(|p| p.duration() < 12.0));
        let joined: Vec<f64> = pieces.iter().flat_map(|p| p.samples.clone()).collect();
        assert_eq!(joined, long.samples);

        let exact = Waveform::new(vec![0.2; 12 * 16000], 16000).unwrap();
        let pieces = split_long(&exact, 12.0).unwrap();
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].len(), pieces[1].len());
    }

    #[test]
    fn split_rounding_never_reaches_max() {
        // 23 samples, max 12 samples: two pieces of 12 would violate the
        // strict bound.
        let w = Waveform::new(vec![0.0; 23], 1).unwrap();
        let pieces = split_long(&w, 12.0).unwrap();
        assert!(pieces.iter().all(|p| p.len() < 12));
        assert_eq!(pieces.iter().map(|p| p.len()).sum::<usize>(), 23);
    }
}
