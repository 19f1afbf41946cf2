use super::{FeatureMaps, FeaturePatch, N_BANDS, N_MAPS};
use crate::error::{Error, Result};

/// Copy `length` frames starting at `start`; frames past the end of the
/// stream repeat the last frame.
pub fn crop_patch(maps: &FeatureMaps, start: usize, length: usize) -> FeaturePatch {
    let t = maps.n_frames;
    let mut data = Vec::with_capacity(N_MAPS * N_BANDS * length);
    for row in maps.data.chunks(t) {
        data.extend((start..start + length).map(|i| row[i.min(t - 1)]));
    }
    FeaturePatch {
        data,
        frames: length,
        start_frame: start,
        valid_frames: t.saturating_sub(start).min(length),
        label: None,
    }
}

/// Cut a stream into windows of `length` frames whose starts are spaced
/// `length * (1 - overlap)` apart. The last window is padded with the final
/// frame when it runs past the end.
pub fn patch_stream(maps: &FeatureMaps, length: usize, overlap: f64) -> Result<Vec<FeaturePatch>> {
    if length == 0 || !(0.0..1.0).contains(&overlap) {
        return Err(Error::domain(format!("bad patch geometry: length {length}, overlap {overlap}")));
    }
    let t = maps.n_frames;
    if t < length && 2 * t < length {
        return Err(Error::domain(format!(
            "{t} frames is too short for a {length}-frame patch"
        )));
    }
    let hop = ((length as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut starts = vec![0usize];
    while starts.last().unwrap() + length < t {
        let next = starts.last().unwrap() + hop;
        starts.push(next);
    }
    Ok(starts.into_iter().map(|s| crop_patch(maps, s, length)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t: usize) -> FeatureMaps {
        let data = (0..N_MAPS * N_BANDS)
            .flat_map(|row| (0..t).map(move |i| (row * 1000 + i) as f32))
            .collect();
        FeatureMaps { n_frames: t, data }
    }

    fn starts(t: usize, len: usize) -> Vec<usize> {
        patch_stream(&ramp(t), len, 0.5).unwrap().iter().map(|p| p.start_frame).collect()
    }

    #[test]
    fn start_positions() {
        assert_eq!(starts(400, 400), vec![0]);
        assert_eq!(starts(800, 400), vec![0, 200, 400]);
        assert_eq!(starts(500, 400), vec![0, 200]);
    }

    #[test]
    fn final_patch_padded_with_last_frame() {
        let maps = ramp(500);
        let p = &patch_stream(&maps, 400, 0.5).unwrap()[1];
        assert_eq!(p.valid_frames, 300);
        for b in [0, 49, 149] {
            assert_eq!(p.get(0, 0, 299), 499.0);
            let last = maps.data[b * 500 + 499];
            for i in 300..400 {
                assert_eq!(p.data[b * 400 + i], last);
            }
        }
    }

    #[test]
    fn short_streams() {
        let one = patch_stream(&ramp(250), 400, 0.5).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].valid_frames, 250);
        assert!(patch_stream(&ramp(199), 400, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn windows_cover_stream(t in 100usize..2000, len in prop::sample::select(vec![200usize, 400])) {
            prop_assume!(2 * t >= len);
            let patches = patch_stream(&ramp(t), len, 0.5).unwrap();
            let mut covered = vec![false; t];
            for p in &patches {
                prop_assert_eq!(p.data.len(), 3 * 50 * len);
                for i in p.start_frame..(p.start_frame + len).min(t) {
                    covered[i] = true;
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
    }
}
