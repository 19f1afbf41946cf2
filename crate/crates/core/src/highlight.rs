//! Moment ranking: an MLP maps per-moment features to a scalar H-factor,
//! trained on within-video pairs with a hinge, Huber or multiple-instance
//! ranking loss, and evaluated by mean average precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{decode_vector, encode_vector};
use crate::nnet::{Layer, Linear, Mode, Network, Tensor, TrainState};
use crate::rng::{rng_for, stage};

/// `max(0, 1 − y_pos + y_neg)`.
pub fn ranking_loss(y_pos: f64, y_neg: f64) -> f64 {
    (1.0 - y_pos + y_neg).max(0.0)
}

/// Huber-smoothed ranking loss: `L²/2` below `delta`, `delta·(L − delta/2)` above.
pub fn huber_ranking_loss(y_pos: f64, y_neg: f64, delta: f64) -> f64 {
    huber(ranking_loss(y_pos, y_neg), delta)
}

/// Hinge on the best-scoring positive of the group.
pub fn mi_ranking_loss(y_pos: &[f64], y_neg: f64) -> f64 {
    ranking_loss(max_of(y_pos), y_neg)
}

fn huber(l: f64, delta: f64) -> f64 {
    if l < delta {
        0.5 * l * l
    } else {
        delta * (l - 0.5 * delta)
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn first_argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ranking,
    Huber,
    MiRank,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranking" => Ok(LossKind::Ranking),
            "huber" => Ok(LossKind::Huber),
            "mirank" => Ok(LossKind::MiRank),
            _ => Err(Error::Config(format!("unknown loss {s:?}, expected ranking, huber or mirank"))),
        }
    }
}

/// Ranking objective. `printed` switches to the literal forms: no zero clamp
/// on the hinge and a `delta·(−L + delta/2)` linear Huber branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub delta: f64,
    /// Positives per multiple-instance group.
    pub instances: usize,
    pub printed: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Ranking,
            delta: 1.0,
            instances: 2,
            printed: false,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("huber delta must be positive, got {}", self.delta)));
        }
        if self.instances == 0 {
            return Err(Error::Config("multiple-instance group size must be at least 1".into()));
        }
        Ok(())
    }

    /// Positives per group under this loss.
    pub fn group_size(&self) -> usize {
        match self.kind {
            LossKind::MiRank => self.instances,
            _ => 1,
        }
    }

    /// Loss of one group and its gradient `(d/d y_pos, d/d y_neg)`.
    pub fn eval(&self, y_pos: &[f64], y_neg: f64) -> (f64, Vec<f64>, f64) {
        let k = match self.kind {
            LossKind::MiRank => first_argmax(y_pos),
            _ => 0,
        };
        let raw = 1.0 - y_pos[k] + y_neg;
        let (l, dl) = if self.printed || raw > 0.0 { (raw, 1.0) } else { (0.0, 0.0) };
        let (loss, scale) = match self.kind {
            LossKind::Huber if l < self.delta => (0.5 * l * l, l * dl),
            LossKind::Huber if self.printed => (self.delta * (-l + 0.5 * self.delta), -self.delta * dl),
            LossKind::Huber => (self.delta * (l - 0.5 * self.delta), self.delta * dl),
            _ => (l, dl),
        };
        let mut d_pos = vec![0.0; y_pos.len()];
        d_pos[k] = -scale;
        (loss, d_pos, scale)
    }
}

/// One moment of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub video_id: String,
    pub moment_id: u32,
    pub label: bool,
    pub feature: Vec<f32>,
}

impl MomentRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.video_id, self.moment_id, u8::from(self.label), encode_vector(&self.feature))
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("bad moment line {line:?}"));
        if f.len() != 4 {
            return Err(bad());
        }
        let label = match f[2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let feature = decode_vector(f[3])?;
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite feature in moment {} of {}", f[1], f[0])));
        }
        Ok(Self {
            video_id: f[0].to_string(),
            moment_id: f[1].parse().map_err(|_| bad())?,
            label,
            feature,
        })
    }
}

pub fn write_moments(path: &Path, moments: &[MomentRecord]) -> Result<()> {
    let mut s = String::new();
    for m in moments {
        s.push_str(&m.to_line());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_moments(path: &Path) -> Result<Vec<MomentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(MomentRecord::parse_line).collect()
}

/// Scores file body: `video_id<TAB>moment_id<TAB>h_factor`.
pub fn scores_to_text(moments: &[MomentRecord], scores: &[f64]) -> String {
    let mut s = String::new();
    for (m, h) in moments.iter().zip(scores) {
        let _ = writeln!(s, "{}\t{}\t{h:.9}", m.video_id, m.moment_id);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerConfig {
    pub hidden: (usize, usize),
    pub runs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            hidden: (64, 16),
            runs: 5,
            epochs: 200,
            learning_rate: 0.01,
            momentum: 0.9,
            loss: LossSpec::default(),
            seed: 0,
        }
    }
}

/// Ensemble of independently trained scorers.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    pub replicas: Vec<Network<f32>>,
    /// Videos left out of pairing for lack of positives or negatives.
    pub excluded_videos: Vec<String>,
}

fn mlp(dim: usize, hidden: (usize, usize)) -> Result<Network<f32>> {
    Network::new(
        &[dim],
        vec![
            Layer::Linear(Linear::zeros(dim, hidden.0)),
            Layer::Relu,
            Layer::Linear(Linear::zeros(hidden.0, hidden.1)),
            Layer::Relu,
            Layer::Linear(Linear::zeros(hidden.1, 1)),
        ],
    )
}

fn feature_dim(moments: &[MomentRecord]) -> Result<usize> {
    let dim = moments.first().ok_or_else(|| Error::domain("no moments"))?.feature.len();
    if dim == 0 {
        return Err(Error::domain("empty feature vectors"));
    }
    if let Some(m) = moments.iter().find(|m| m.feature.len() != dim) {
        return Err(Error::shape(
            0,
            format!("moment {} of {} has {} features, expected {dim}", m.moment_id, m.video_id, m.feature.len()),
        ));
    }
    Ok(dim)
}

fn stack(moments: &[MomentRecord], dim: usize) -> Tensor<f32> {
    let data = moments.iter().flat_map(|m| m.feature.iter().copied()).collect();
    Tensor::from_vec(&[moments.len(), dim], data)
}

/// Per-video `(positive indices, negative indices)` in moment order.
fn video_groups(moments: &[MomentRecord]) -> BTreeMap<&str, (Vec<usize>, Vec<usize>)> {
    let mut by_video: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, m) in moments.iter().enumerate() {
        let entry = by_video.entry(&m.video_id).or_default();
        if m.label {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    by_video
}

fn train_replica(
    moments: &[MomentRecord],
    videos: &[(Vec<usize>, Vec<usize>)],
    x: &Tensor<f32>,
    cfg: &RankerConfig,
    run: usize,
) -> Result<Network<f32>> {
    let mut rng = rng_for(cfg.seed, stage::RANK, run as u64);
    let mut net = mlp(x.item_len(), cfg.hidden)?;
    net.init_he(&mut rng);
    let mut state = TrainState::new(&net.params(), cfg.learning_rate, cfg.seed);
    state.momentum = cfg.momentum;
    let group = cfg.loss.group_size();
    for _ in 0..cfg.epochs {
        // Each positive (or group of positives) against one random negative of its video.
        let mut groups: Vec<(Vec<usize>, usize)> = Vec::new();
        for (pos, neg) in videos {
            for &p in pos {
                let mut members = vec![p];
                while members.len() < group {
                    members.push(*pos.choose(&mut rng).expect("non-empty"));
                }
                groups.push((members, neg[rng.gen_range(0..neg.len())]));
            }
        }
        let (out, cache) = net.forward(x.clone(), Mode::Eval)?;
        let y: Vec<f64> = out.data().iter().map(|&v| v as f64).collect();
        let mut dy = vec![0.0f64; y.len()];
        let scale = 1.0 / groups.len() as f64;
        for (members, n) in &groups {
            let ys: Vec<f64> = members.iter().map(|&i| y[i]).collect();
            let (_, d_pos, d_neg) = cfg.loss.eval(&ys, y[*n]);
            for (&i, d) in members.iter().zip(d_pos) {
                dy[i] += d * scale;
            }
            dy[*n] += d_neg * scale;
        }
        let d_out = Tensor::from_vec(&[moments.len(), 1], dy.into_iter().map(|v| v as f32).collect());
        let grads = net.backward(&cache, d_out, false);
        state.step(&mut net.params_mut(), &grads.params)?;
    }
    if !net.params().iter().all(|p| p.all_finite()) {
        return Err(Error::Numerical(format!("ranker run {run} diverged")));
    }
    Ok(net)
}

/// Train `cfg.runs` scorers on within-video comparisons.
pub fn train_ranker(moments: &[MomentRecord], cfg: &RankerConfig) -> Result<RankerModel> {
    cfg.loss.validate()?;
    if cfg.runs == 0 {
        return Err(Error::Config("ranker needs at least one run".into()));
    }
    let dim = feature_dim(moments)?;
    let mut videos = Vec::new();
    let mut excluded_videos = Vec::new();
    for (id, (pos, neg)) in video_groups(moments) {
        if pos.is_empty() || neg.is_empty() {
            excluded_videos.push(id.to_string());
        } else {
            videos.push((pos, neg));
        }
    }
    if videos.is_empty() {
        return Err(Error::domain("no video has both highlight and non-highlight moments"));
    }
    let x = stack(moments, dim);
    let replicas = (0..cfg.runs)
        .into_par_iter()
        .map(|run| train_replica(moments, &videos, &x, cfg, run))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankerModel { replicas, excluded_videos })
}

/// Mean replica output per moment.
pub fn score_moments(model: &RankerModel, moments: &[MomentRecord]) -> Result<Vec<f64>> {
    let dim = feature_dim(moments)?;
    let expected = model.replicas.first().ok_or_else(|| Error::domain("empty ensemble"))?.input_shape()[0];
    if dim != expected {
        return Err(Error::shape(0, format!("ranker takes {expected} features, moments have {dim}")));
    }
    let x = stack(moments, dim);
    let mut acc = vec![0.0f64; moments.len()];
    for net in &model.replicas {
        for (a, &v) in acc.iter_mut().zip(net.infer(x.clone())?.data()) {
            *a += v as f64;
        }
    }
    let r = model.replicas.len() as f64;
    Ok(acc.into_iter().map(|a| a / r).collect())
}

/// Average precision of one video's ranking. Items are `(moment_id, score,
/// label)`; ties go to the lower moment id. `None` without positives.
pub fn average_precision(items: &[(u32, f64, bool)]) -> Option<f64> {
    let mut order: Vec<&(u32, f64, bool)> = items.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, item) in order.iter().enumerate() {
        if item.2 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub per_video: Vec<(String, f64)>,
    /// Videos without positives.
    pub excluded: Vec<String>,
}

/// Per-video AP averaged over videos that have at least one positive.
pub fn mean_average_precision(moments: &[MomentRecord], scores: &[f64]) -> Result<MapReport> {
    if moments.len() != scores.len() {
        return Err(Error::domain(format!("{} moments but {} scores", moments.len(), scores.len())));
    }
    let mut by_video: BTreeMap<&str, Vec<(u32, f64, bool)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (m, &s) in moments.iter().zip(scores) {
        if !seen.insert((m.video_id.as_str(), m.moment_id)) {
            return Err(Error::domain(format!("duplicate moment {} in {}", m.moment_id, m.video_id)));
        }
        by_video.entry(&m.video_id).or_default().push((m.moment_id, s, m.label));
    }
    let mut per_video = Vec::new();
    let mut excluded = Vec::new();
    for (id, items) in by_video {
        match average_precision(&items) {
            Some(ap) => per_video.push((id.to_string(), ap)),
            None => excluded.push(id.to_string()),
        }
    }
    if per_video.is_empty() {
        return Err(Error::domain("no video has a highlight moment"));
    }
    let map = per_video.iter().map(|v| v.1).sum::<f64>() / per_video.len() as f64;
    Ok(MapReport { map, per_video, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use itertools::Itertools;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(ranking_loss(2.0, 0.0), 0.0);
        assert_eq!(ranking_loss(0.0, 0.0), 1.0);
        assert_eq!(huber_ranking_loss(2.0, 0.0, 1.0), 0.0);
        assert_eq!(huber_ranking_loss(-1.0, 0.0, 1.0), 1.5);
        assert_eq!(huber_ranking_loss(0.0, 0.0, 1.0), 0.5);
        assert_eq!(mi_ranking_loss(&[0.0, 5.0], 0.0), 0.0);
        for (p, n) in [(0.3, 0.1), (-2.0, 1.0), (4.0, 0.5)] {
            assert_eq!(mi_ranking_loss(&[p], n), ranking_loss(p, n));
        }
    }

    #[test]
    fn huber_joint_is_smooth() {
        for delta in [0.5, 1.0, 2.0] {
            let below = huber(delta - 1e-9, delta);
            let above = huber(delta + 1e-9, delta);
            assert!((below - above).abs() < 1e-8);
            assert!((huber(delta, delta) - delta * delta / 2.0).abs() < 1e-15);
            let h = 1e-6;
            let left = (huber(delta, delta) - huber(delta - h, delta)) / h;
            let right = (huber(delta + h, delta) - huber(delta, delta)) / h;
            assert!((left - right).abs() < 1e-5, "{left} {right}");
        }
    }

    #[test]
    fn eval_gradients_match_finite_differences() {
        let h = 1e-6;
        for kind in [LossKind::Ranking, LossKind::Huber, LossKind::MiRank] {
            for printed in [false, true] {
                let spec = LossSpec { kind, printed, ..LossSpec::default() };
                for (pos, neg) in [(vec![0.2, -0.4], 0.1), (vec![-1.5, -2.0], 0.7), (vec![0.9, 0.3], 0.5)] {
                    let pos = if kind == LossKind::MiRank { pos } else { pos[..1].to_vec() };
                    let (_, d_pos, d_neg) = spec.eval(&pos, neg);
                    let f = |p: &[f64], n: f64| spec.eval(p, n).0;
                    for i in 0..pos.len() {
                        let (mut up, mut dn) = (pos.clone(), pos.clone());
                        up[i] += h;
                        dn[i] -= h;
                        let fd = (f(&up, neg) - f(&dn, neg)) / (2.0 * h);
                        assert!((fd - d_pos[i]).abs() < 1e-6, "{kind:?} {printed} {fd} {}", d_pos[i]);
                    }
                    let fd = (f(&pos, neg + h) - f(&pos, neg - h)) / (2.0 * h);
                    assert!((fd - d_neg).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mirank_gradient_reaches_only_the_best_positive() {
        let spec = LossSpec::new(LossKind::MiRank);
        let (loss, d_pos, d_neg) = spec.eval(&[0.1, 0.4, 0.4], 0.0);
        assert!((loss - 0.6).abs() < 1e-12);
        assert_eq!(d_pos, vec![0.0, -1.0, 0.0]);
        assert_eq!(d_neg, 1.0);
    }

    #[test]
    fn printed_forms() {
        let spec = LossSpec { printed: true, ..LossSpec::default() };
        assert_eq!(spec.eval(&[3.0], 0.0).0, -2.0);
        let huber = LossSpec { kind: LossKind::Huber, printed: true, ..LossSpec::default() };
        assert_eq!(huber.eval(&[-1.0], 0.0).0, -1.5);
        assert_eq!(LossSpec::new(LossKind::Huber).eval(&[-1.0], 0.0).0, 1.5);
    }

    #[test]
    fn ap_hand_cases() {
        let v = [(0, 0.9, true), (1, 0.8, false), (2, 0.7, true), (3, 0.1, false)];
        assert!((average_precision(&v).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
        assert_eq!(average_precision(&[(0, 1.0, true), (1, 0.0, false)]), Some(1.0));
        assert_eq!(average_precision(&[(0, 1.0, false)]), None);
        // Ties resolve by moment id.
        assert_eq!(average_precision(&[(0, 0.5, false), (1, 0.5, true)]), Some(0.5));
        assert_eq!(average_precision(&[(0, 0.5, true), (1, 0.5, false)]), Some(1.0));
    }

    #[test]
    fn reversed_ranking_is_the_worst_permutation() {
        for n in 2..=6usize {
            for n_pos in 1..n {
                let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
                let perfect: Vec<(u32, f64, bool)> = (0..n).map(|i| (i as u32, (n - i) as f64, labels[i])).collect();
                let reversed: Vec<(u32, f64, bool)> = perfect.iter().map(|&(id, s, l)| (id, -s, l)).collect();
                let worst = (0..n)
                    .permutations(n)
                    .map(|p| {
                        let items: Vec<_> = (0..n).map(|i| (i as u32, p[i] as f64, labels[i])).collect();
                        average_precision(&items).unwrap()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(average_precision(&perfect), Some(1.0));
                assert!((average_precision(&reversed).unwrap() - worst).abs() < 1e-12);
            }
        }
    }

    fn moment(video: &str, id: u32, label: bool, feature: Vec<f32>) -> MomentRecord {
        MomentRecord { video_id: video.into(), moment_id: id, label, feature }
    }

    /// Positives sit along a direction the negatives lack.
    fn separable(videos: usize, seed: u64) -> Vec<MomentRecord> {
        let mut rng = seeded(seed);
        let mut out = Vec::new();
        for v in 0..videos {
            for m in 0..8u32 {
                let label = m % 4 == 1;
                let mut f: Vec<f32> = (0..12).map(|_| rng.gen_range(-0.3..0.3)).collect();
                if label {
                    f[0] += 1.0;
                }
                out.push(moment(&format!("v{v:03}"), m, label, f));
            }
        }
        out
    }

    #[test]
    fn learns_separable_moments() {
        let train = separable(10, 1);
        let test = separable(10, 2);
        for kind in [LossKind::Ranking, LossKind::Huber, LossKind::MiRank] {
            let cfg = RankerConfig { loss: LossSpec::new(kind), runs: 2, epochs: 100, seed: 3, ..Default::default() };
            let model = train_ranker(&train, &cfg).unwrap();
            let report = mean_average_precision(&test, &score_moments(&model, &test).unwrap()).unwrap();
            assert!(report.map >= 0.95, "{kind:?} {}", report.map);
        }
    }

    #[test]
    fn ensemble_is_the_replica_mean_and_deterministic() {
        let data = separable(3, 4);
        let cfg = RankerConfig { runs: 3, epochs: 20, seed: 9, ..Default::default() };
        let model = train_ranker(&data, &cfg).unwrap();
        assert_eq!(model, train_ranker(&data, &cfg).unwrap());
        let scores = score_moments(&model, &data).unwrap();
        let by_hand: Vec<f64> = (0..data.len())
            .map(|i| {
                model
                    .replicas
                    .iter()
                    .map(|r| r.infer(stack(&data[i..=i], 12)).unwrap().data()[0] as f64)
                    .sum::<f64>()
                    / 3.0
            })
            .collect();
        for (a, b) in scores.iter().zip(&by_hand) {
            assert!((a - b).abs() < 1e-9);
        }
        let single = RankerModel { replicas: vec![model.replicas[0].clone(); 3], excluded_videos: vec![] };
        let one = RankerModel { replicas: vec![model.replicas[0].clone()], excluded_videos: vec![] };
        let (a, b) = (score_moments(&single, &data).unwrap(), score_moments(&one, &data).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        let mut reversed = data.clone();
        reversed.reverse();
        let mut back = score_moments(&model, &reversed).unwrap();
        back.reverse();
        assert_eq!(back, scores);
    }

    #[test]
    fn excluded_videos_and_errors() {
        let mut data = separable(2, 5);
        data.push(moment("lonely", 0, false, vec![0.0; 12]));
        let model = train_ranker(&data, &RankerConfig { runs: 1, epochs: 2, ..Default::default() }).unwrap();
        assert_eq!(model.excluded_videos, vec!["lonely".to_string()]);
        let scores = score_moments(&model, &data).unwrap();
        assert_eq!(mean_average_precision(&data, &scores).unwrap().excluded, vec!["lonely".to_string()]);
        let wrong = vec![moment("v", 0, true, vec![0.0; 5])];
        assert!(matches!(score_moments(&model, &wrong), Err(Error::Shape { .. })));
        let bad = LossSpec { delta: 0.0, ..LossSpec::default() };
        assert!(train_ranker(&data, &RankerConfig { loss: bad, ..Default::default() }).is_err());
        assert!(train_ranker(&[moment("v", 0, true, vec![1.0])], &RankerConfig::default()).is_err());
    }

    /// Expected AP of a uniformly random ranking of `n` items with `k` positives.
    fn random_ap(n: usize, k: usize) -> f64 {
        let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        (k - 1) as f64 / (n - 1) as f64 + (n - k) as f64 / (n - 1) as f64 * harmonic / n as f64
    }

    fn random_map(n: usize, k: usize, seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let mut moments = Vec::new();
        let mut scores = Vec::new();
        for v in 0..100 {
            for m in 0..n as u32 {
                moments.push(moment(&format!("v{v}"), m, (m as usize) < k, vec![0.0]));
                scores.push(rng.gen::<f64>());
            }
        }
        mean_average_precision(&moments, &scores).unwrap().map
    }

    #[test]
    fn random_scores_on_balanced_videos_sit_near_the_positive_rate() {
        let map = random_map(20, 10, 11);
        assert!((map - 0.5).abs() <= 0.1, "{map}");
    }

    #[test]
    fn random_scores_match_the_expected_ap() {
        // Small cases against exhaustive enumeration.
        for (n, k) in [(4, 1), (4, 2), (5, 2), (6, 3)] {
            let total: f64 = (0..n)
                .permutations(n)
                .map(|p| average_precision(&(0..n).map(|i| (i as u32, p[i] as f64, i < k)).collect::<Vec<_>>()).unwrap())
                .sum();
            let count = (1..=n).product::<usize>() as f64;
            assert!((total / count - random_ap(n, k)).abs() < 1e-12);
        }
        for (n, k) in [(8, 2), (20, 5)] {
            let map = random_map(n, k, 12);
            assert!((map - random_ap(n, k)).abs() < 0.05, "{n} {k} {map} {}", random_ap(n, k));
        }
    }

    #[test]
    fn file_round_trips() {
        let data = separable(1, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moments.tsv");
        write_moments(&path, &data).unwrap();
        assert_eq!(read_moments(&path).unwrap(), data);
        assert!(MomentRecord::parse_line("v\t0\t2\t00000000").is_err());
        let text = scores_to_text(&data[..2], &[0.5, -1.0]);
        assert_eq!(text.lines().next().unwrap(), "v000\t0\t0.500000000");
    }

    proptest! {
        #[test]
        fn translation_invariance(scores in prop::collection::vec(-3.0f64..3.0, 4), shift in -10.0f64..10.0) {
            let items: Vec<(u32, f64, bool)> = scores.iter().enumerate().map(|(i, &s)| (i as u32, s, i % 2 == 0)).collect();
            let shifted: Vec<(u32, f64, bool)> = items.iter().map(|&(i, s, l)| (i, s + shift, l)).collect();
            let (a, b) = (average_precision(&items).unwrap(), average_precision(&shifted).unwrap());
            // Shifting can merge near-ties only at float resolution.
            prop_assume!(scores.iter().tuple_combinations().all(|(x, y)| (x - y).abs() > 1e-9));
            prop_assert!((a - b).abs() < 1e-12);
            for kind in [LossKind::Ranking, LossKind::Huber, LossKind::MiRank] {
                let spec = LossSpec::new(kind);
                let l0 = spec.eval(&scores[..2], scores[2]).0;
                let l1 = spec.eval(&[scores[0] + shift, scores[1] + shift], scores[2] + shift).0;
                prop_assert!((l0 - l1).abs() < 1e-9);
            }
        }

        #[test]
        fn losses_are_non_negative(p in -5.0f64..5.0, q in -5.0f64..5.0, n in -5.0f64..5.0) {
            prop_assert!(ranking_loss(p, n) >= 0.0);
            prop_assert!(huber_ranking_loss(p, n, 1.0) >= 0.0);
            prop_assert!(mi_ranking_loss(&[p, q], n) >= 0.0);
            if p.min(q) >= n + 1.0 {
                prop_assert_eq!(mi_ranking_loss(&[p, q], n), 0.0);
                prop_assert_eq!(huber_ranking_loss(p, n, 1.0), 0.0);
            }
        }
    }
}
