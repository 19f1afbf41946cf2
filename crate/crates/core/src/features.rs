//! Transferable clip descriptors: the post-ReLU activation of a trained
//! classifier's second-to-last fully connected layer, per patch, scaled to
//! unit length.

use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::{add_deltas, log_mel_filterbank, patch_stream, standardize, Waveform};
use crate::error::{Error, Result};
use crate::nnet::{Network, Tensor};
use crate::zoo::feature_end;

/// Default patch length for extraction (2 s).
pub const FEATURE_FRAMES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct AenetFeature {
    pub vector: Vec<f32>,
    pub t_start: f64,
    pub t_end: f64,
}

/// Scale to unit L2 norm; an all-zero vector stays zero.
pub fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    }
}

/// One feature per `patch_frames` window of `w`, windows overlapping by
/// `overlap`.
pub fn extract_features(net: &Network<f32>, w: &Waveform, patch_frames: usize, overlap: f64) -> Result<Vec<AenetFeature>> {
    if net.input_shape().last() != Some(&patch_frames) {
        return Err(Error::shape(
            0,
            format!("network takes {:?} inputs, extraction uses {patch_frames}-frame patches", net.input_shape()),
        ));
    }
    let end = feature_end(net).ok_or_else(|| Error::shape(0, "network has fewer than two fully connected layers"))?;
    let maps = add_deltas(&log_mel_filterbank(&standardize(w)?)?)?;
    let mut patches = patch_stream(&maps, patch_frames, overlap)?;
    let mut shape = vec![patches.len()];
    shape.extend_from_slice(net.input_shape());
    let mut data = Vec::with_capacity(patches.len() * patches[0].data.len());
    for p in patches.iter_mut() {
        p.normalize_maps();
        data.extend_from_slice(&p.data);
    }
    let acts = net.infer_range(Tensor::from_vec(&shape, data), 0..end)?;
    let width = acts.item_len();
    Ok(acts
        .data()
        .chunks(width)
        .zip(&patches)
        .map(|(row, p)| {
            let mut vector = row.to_vec();
            l2_normalize(&mut vector);
            AenetFeature {
                vector,
                t_start: p.t_start(),
                t_end: p.t_end(),
            }
        })
        .collect())
}

/// Elementwise mean of patch features, not re-normalized.
pub fn average_clip(features: &[AenetFeature]) -> Result<Vec<f32>> {
    let first = features.first().ok_or_else(|| Error::domain("no features to average"))?;
    let n = features.len() as f64;
    let mut acc = vec![0.0f64; first.vector.len()];
    for f in features {
        if f.vector.len() != acc.len() {
            return Err(Error::domain("feature widths differ"));
        }
        acc.iter_mut().zip(&f.vector).for_each(|(a, &v)| *a += v as f64);
    }
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Mean of the patch features lying inside `[t_start, t_end]`; when none
/// fits, those whose centre falls in the window. `None` if neither exists.
pub fn window_average(features: &[AenetFeature], t_start: f64, t_end: f64) -> Option<Vec<f32>> {
    const SLACK: f64 = 1e-6;
    let inside: Vec<AenetFeature> = features
        .iter()
        .filter(|f| f.t_start >= t_start - SLACK && f.t_end <= t_end + SLACK)
        .cloned()
        .collect();
    let chosen = if inside.is_empty() {
        features
            .iter()
            .filter(|f| (t_start..t_end).contains(&(0.5 * (f.t_start + f.t_end))))
            .cloned()
            .collect()
    } else {
        inside
    };
    average_clip(&chosen).ok()
}

pub fn encode_vector(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_vector(s: &str) -> Result<Vec<f32>> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::Parse(format!("bad hex vector: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse("hex vector length is not a multiple of 4 bytes".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Feature file body: `clip_id<TAB>t_start<TAB>t_end<TAB>hex` per patch.
pub fn features_to_text(clip_id: &str, features: &[AenetFeature]) -> String {
    let mut s = String::new();
    for f in features {
        let _ = writeln!(s, "{clip_id}\t{:.3}\t{:.3}\t{}", f.t_start, f.t_end, encode_vector(&f.vector));
    }
    s
}

/// Parse a feature file into `(clip_id, feature)` records.
pub fn parse_feature_file(text: &str) -> Result<Vec<(String, AenetFeature)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse(format!("bad feature line {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok((
                f[0].to_string(),
                AenetFeature {
                    t_start: f[1].parse().map_err(|_| bad())?,
                    t_end: f[2].parse().map_err(|_| bad())?,
                    vector: decode_vector(f[3])?,
                },
            ))
        })
        .collect()
}

pub fn read_feature_file(path: &Path) -> Result<Vec<(String, AenetFeature)>> {
    parse_feature_file(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use crate::rng::seeded;
    use crate::zoo::{ArchId, ArchSpec};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn net() -> Network<f32> {
        let mut n = ArchSpec::new(ArchId::parse("custom:conv4,pool2x2,fc24,fc12").unwrap(), 3, 200).build().unwrap();
        n.init_he(&mut seeded(2));
        n
    }

    fn noise(seconds: f64, seed: u64) -> Waveform {
        let mut rng = seeded(seed);
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn unit_norm_and_timestamps() {
        // 4 s plus one frame of margin gives exactly 400 frames.
        let w = noise(4.015, 1);
        let feats = extract_features(&net(), &w, 200, 0.5).unwrap();
        assert_eq!(feats.len(), 3);
        let starts: Vec<f64> = feats.iter().map(|f| f.t_start).collect();
        assert_eq!(starts, vec![0.0, 1.0, 2.0]);
        for f in &feats {
            assert_eq!(f.vector.len(), 12);
            let norm: f64 = f.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6 || norm == 0.0, "{norm}");
        }
        assert_eq!(feats, extract_features(&net(), &w, 200, 0.5).unwrap());
    }

    #[test]
    fn geometry_and_length_errors() {
        let w = noise(3.0, 1);
        assert!(matches!(extract_features(&net(), &w, 400, 0.5), Err(Error::Shape { .. })));
        assert!(extract_features(&net(), &noise(0.5, 2), 200, 0.5).is_err());
    }

    #[test]
    fn edits_outside_a_patch_leave_it_alone() {
        let mut w = noise(6.0, 3);
        w.samples[100] = 1.0;
        let mut edited = w.clone();
        // Patch 0 covers samples up to about 32 400; deltas reach 4 frames further.
        for v in edited.samples[40_000..].iter_mut() {
            *v *= 0.3;
        }
        let a = extract_features(&net(), &w, 200, 0.5).unwrap();
        let b = extract_features(&net(), &edited, 200, 0.5).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a.last(), b.last());
        let quiet = Waveform::new(w.samples.iter().map(|v| v * 0.5).collect(), SAMPLE_RATE).unwrap();
        assert!(extract_features(&net(), &quiet, 200, 0.5).unwrap().iter().all(|f| f.vector.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn averaging() {
        let f = AenetFeature { vector: vec![0.6, 0.8], t_start: 0.0, t_end: 2.0 };
        assert_eq!(average_clip(std::slice::from_ref(&f)).unwrap(), f.vector);
        assert_eq!(average_clip(&[f.clone(), f.clone()]).unwrap(), f.vector);
        assert!(average_clip(&[]).is_err());
    }

    #[test]
    fn window_selection() {
        let feats: Vec<AenetFeature> = (0..5)
            .map(|k| AenetFeature { vector: vec![k as f32], t_start: k as f64, t_end: k as f64 + 2.0 })
            .collect();
        assert_eq!(window_average(&feats, 2.0, 4.0), Some(vec![2.0]));
        assert_eq!(window_average(&feats, 0.0, 4.0), Some(vec![1.0]));
        assert_eq!(window_average(&feats, 2.5, 3.5), Some(vec![2.0]));
        assert_eq!(window_average(&feats, 9.0, 11.0), None);
    }

    #[test]
    fn file_round_trip() {
        let feats = vec![
            AenetFeature { vector: vec![0.6, -0.8, 0.0], t_start: 0.0, t_end: 2.0 },
            AenetFeature { vector: vec![1.0, 0.0, f32::MIN_POSITIVE], t_start: 1.0, t_end: 3.0 },
        ];
        let back = parse_feature_file(&features_to_text("c1", &feats)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, "c1");
        assert_eq!(back.iter().map(|b| b.1.clone()).collect::<Vec<_>>(), feats);
        assert!(decode_vector("abc").is_err());
    }

    proptest! {
        #[test]
        fn mean_of_unit_vectors_is_short(raw in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 1..8)) {
            let feats: Vec<AenetFeature> = raw
                .into_iter()
                .map(|mut v| { v[0] += 2.0; l2_normalize(&mut v); AenetFeature { vector: v, t_start: 0.0, t_end: 0.0 } })
                .collect();
            let m = average_clip(&feats).unwrap();
            let norm = m.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-6);
        }
    }
}
