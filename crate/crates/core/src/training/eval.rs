use std::fmt::Write as _;

use super::{ClipFeatures, Voting};
use crate::dsp::patch_stream;
use crate::error::{Error, Result};
use crate::nnet::{Network, Tensor};

/// Patches pushed through the network at once during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPosterior {
    pub clip_id: String,
    pub label: u32,
    pub probs: Vec<f64>,
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]` clip counts.
    pub confusion: Vec<Vec<usize>>,
    pub posteriors: Vec<ClipPosterior>,
    /// Mean clip cross-entropy of the voted posteriors.
    pub loss: f64,
    /// Clips too short to yield a patch.
    pub skipped: Vec<String>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Combine per-patch posteriors into one clip distribution.
pub fn vote(patch_probs: &[Vec<f64>], voting: Voting) -> Vec<f64> {
    let k = patch_probs[0].len();
    let n = patch_probs.len() as f64;
    let mut out = vec![0.0; k];
    for p in patch_probs {
        match voting {
            Voting::Mean => out.iter_mut().zip(p).for_each(|(o, v)| *o += v / n),
            Voting::Majority => out[argmax(p)] += 1.0 / n,
        }
    }
    out
}

/// Posterior of every patch of one clip.
pub fn patch_posteriors(net: &Network<f32>, clip: &ClipFeatures, length: usize, overlap: f64) -> Result<Vec<Vec<f64>>> {
    let mut patches = patch_stream(&clip.maps, length, overlap)?;
    let per = patches[0].data.len();
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks_mut(EVAL_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * per);
        for p in chunk.iter_mut() {
            p.normalize_maps();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(net.input_shape());
        let y = net.infer(Tensor::from_vec(&shape, data))?;
        let k = y.item_len();
        out.extend(y.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Patch-voting evaluation over labeled clips.
pub fn evaluate(net: &Network<f32>, clips: &[ClipFeatures], n_classes: usize, length: usize, overlap: f64, voting: Voting) -> Result<EvalReport> {
    if net.input_shape().last() != Some(&length) {
        return Err(Error::shape(0, format!("network expects {:?}, patches have {length} frames", net.input_shape())));
    }
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let mut posteriors = Vec::with_capacity(clips.len());
    let mut skipped = Vec::new();
    let mut loss = 0.0;
    for clip in clips {
        let probs = match patch_posteriors(net, clip, length, overlap) {
            Ok(p) => vote(&p, voting),
            Err(Error::Domain(_)) => {
                skipped.push(clip.clip_id.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let predicted = argmax(&probs) as u32;
        let label = clip.class_id as usize;
        if label >= n_classes {
            return Err(Error::Config(format!("clip {} has class {label} ≥ {n_classes}", clip.clip_id)));
        }
        confusion[label][predicted as usize] += 1;
        loss -= probs[label].max(crate::nnet::loss::PROB_FLOOR).ln();
        posteriors.push(ClipPosterior {
            clip_id: clip.clip_id.clone(),
            label: clip.class_id,
            probs,
            predicted,
        });
    }
    let total = posteriors.len();
    let correct: usize = (0..n_classes).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        confusion,
        posteriors,
        loss: if total == 0 { 0.0 } else { loss / total as f64 },
        skipped,
    })
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            confusion,
            posteriors: Vec::new(),
            loss: 0.0,
            skipped: Vec::new(),
        }
    }

    /// Rows of the confusion matrix divided by their sums; empty rows stay 0.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .map(|r| {
                let s: usize = r.iter().sum();
                r.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Accuracy line followed by one line per confusion row.
    pub fn to_text(&self) -> String {
        let mut s = format!("accuracy {:.6}\n", self.accuracy);
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = || Error::Parse("malformed evaluation report".into());
        let acc: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("accuracy "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(bad)?;
        let confusion = lines
            .map(|l| l.split_whitespace().map(|c| c.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>())
            .collect::<Result<Vec<_>>>()?;
        if confusion.iter().any(|r| r.len() != confusion.len()) {
            return Err(bad());
        }
        let mut r = Self::from_confusion(confusion);
        r.accuracy = acc;
        Ok(r)
    }
}

/// Row-normalized confusion of `a` minus that of `b`.
pub fn confusion_difference(a: &EvalReport, b: &EvalReport) -> Result<Vec<Vec<f64>>> {
    if a.confusion.len() != b.confusion.len() {
        return Err(Error::Config(format!(
            "reports cover {} and {} classes",
            a.confusion.len(),
            b.confusion.len()
        )));
    }
    Ok(a.row_normalized()
        .iter()
        .zip(b.row_normalized())
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{FeatureMaps, N_BANDS, N_MAPS};
    use crate::nnet::{Layer, Linear};
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn mean_voting_example() {
        let p = vote(&[vec![0.6, 0.4], vec![0.2, 0.8]], Voting::Mean);
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12);
        assert_eq!(argmax(&p), 1);
        assert_eq!(vote(&[vec![0.6, 0.4], vec![0.7, 0.3], vec![0.1, 0.9]], Voting::Majority)[0], 2.0 / 3.0);
    }

    fn clip(id: &str, class: u32, frames: usize, fill: f32) -> ClipFeatures {
        ClipFeatures {
            clip_id: id.into(),
            class_id: class,
            maps: FeatureMaps {
                n_frames: frames,
                data: (0..N_MAPS * N_BANDS * frames).map(|i| fill + (i % 7) as f32 * 0.1).collect(),
            },
        }
    }

    #[test]
    fn single_patch_clip_uses_its_argmax() {
        let mut net = Network::<f32>::new(&[3, 50, 200], vec![Layer::Flatten, Layer::Linear(Linear::zeros(30_000, 3)), Layer::Softmax]).unwrap();
        net.init_he(&mut seeded(1));
        let c = clip("a", 0, 200, 0.0);
        let post = patch_posteriors(&net, &c, 200, 0.5).unwrap();
        assert_eq!(post.len(), 1);
        let r = evaluate(&net, &[c, clip("short", 1, 40, 0.0)], 3, 200, 0.5, Voting::Mean).unwrap();
        assert_eq!(r.posteriors[0].predicted as usize, argmax(&post[0]));
        assert_eq!(r.skipped, vec!["short".to_string()]);
        assert!(evaluate(&net, &[], 3, 400, 0.5, Voting::Mean).is_err());
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let mut rng = seeded(6);
        for _ in 0..20 {
            let m = rng.gen_range(2..6);
            let conf: Vec<Vec<usize>> = (0..m).map(|_| (0..m).map(|_| rng.gen_range(0..5)).collect()).collect();
            let r = EvalReport::from_confusion(conf.clone());
            let trace: usize = (0..m).map(|i| conf[i][i]).sum();
            let total: usize = conf.iter().flatten().sum();
            assert_eq!(r.accuracy, if total == 0 { 0.0 } else { trace as f64 / total as f64 });
            let back = EvalReport::from_text(&r.to_text()).unwrap();
            assert_eq!(back.confusion, conf);
        }
    }

    #[test]
    fn difference_properties() {
        let perfect = EvalReport::from_confusion(vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]);
        let uniform = EvalReport::from_confusion(vec![vec![1, 1, 1], vec![2, 2, 2], vec![3, 3, 3]]);
        let d = confusion_difference(&perfect, &uniform).unwrap();
        for i in 0..3 {
            assert!((d[i][i] - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        }
        assert!(confusion_difference(&perfect, &perfect).unwrap().iter().flatten().all(|&v| v == 0.0));
        let rev = confusion_difference(&uniform, &perfect).unwrap();
        for (a, b) in d.iter().flatten().zip(rev.iter().flatten()) {
            assert_eq!(*a, -*b);
        }
        let small = EvalReport::from_confusion(vec![vec![1, 0], vec![0, 1]]);
        assert!(confusion_difference(&perfect, &small).is_err());
    }
}
