//! Multiple-instance learning: bags of patches sharing one label, scored by
//! a shared network and combined by max or Noisy-OR aggregation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dsp::FeaturePatch;
use crate::error::{Error, Result};
use crate::nnet::loss::{add_l1_subgradient, l1_penalty, softmax_in_place, PROB_FLOOR};
use crate::nnet::{Mode, Network, Scalar, Tensor, TrainState};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    NoisyOr,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "noisy_or" => Ok(Aggregation::NoisyOr),
            _ => Err(Error::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::NoisyOr => "noisy_or",
        })
    }
}

/// Instances sharing one class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub instances: Vec<FeaturePatch>,
    pub label: u32,
}

/// Pre-aggregation scores `h[class][instance]`, stored class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BagActivation {
    pub classes: usize,
    pub instances: usize,
    pub h: Vec<f64>,
}

impl BagActivation {
    pub fn new(classes: usize, instances: usize, h: Vec<f64>) -> Self {
        assert_eq!(h.len(), classes * instances, "h must be classes × instances");
        assert!(instances >= 1, "a bag needs at least one instance");
        Self { classes, instances, h }
    }

    /// Transpose per-instance logit rows (`instances × classes`).
    pub fn from_instance_rows(rows: &[f64], classes: usize) -> Self {
        let n = rows.len() / classes;
        let mut h = vec![0.0; rows.len()];
        for j in 0..n {
            for i in 0..classes {
                h[i * n + j] = rows[j * classes + i];
            }
        }
        Self::new(classes, n, h)
    }

    pub fn get(&self, class: usize, instance: usize) -> f64 {
        self.h[class * self.instances + instance]
    }

    fn row(&self, class: usize) -> &[f64] {
        &self.h[class * self.instances..(class + 1) * self.instances]
    }

    /// Per-instance softmax across classes, same layout as `h`.
    pub fn instance_softmax(&self) -> Vec<f64> {
        let (m, n) = (self.classes, self.instances);
        let mut p = vec![0.0; m * n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            for i in 0..m {
                col[i] = self.get(i, j);
            }
            softmax_in_place(&mut col);
            for i in 0..m {
                p[i * n + j] = col[i];
            }
        }
        p
    }
}

/// First instance attaining each class's maximum.
pub fn argmax_instances(h: &BagActivation) -> Vec<usize> {
    (0..h.classes)
        .map(|i| {
            let row = h.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Softmax over classes of the per-class maximum score.
pub fn aggregate_max(h: &BagActivation) -> Vec<f64> {
    let mut p: Vec<f64> = argmax_instances(h).iter().enumerate().map(|(i, &j)| h.get(i, j)).collect();
    softmax_in_place(&mut p);
    p
}

/// Noisy-OR scores `1 − Π_j (1 − p_ij)` before renormalization.
pub fn noisy_or_scores(h: &BagActivation) -> Vec<f64> {
    let p = h.instance_softmax();
    p.chunks(h.instances).map(|row| 1.0 - row.iter().map(|&v| 1.0 - v).product::<f64>()).collect()
}

/// Noisy-OR scores renormalized to sum to one.
pub fn aggregate_noisy_or(h: &BagActivation) -> Vec<f64> {
    let q = noisy_or_scores(h);
    let s: f64 = q.iter().sum();
    q.iter().map(|v| v / s).collect()
}

pub fn aggregate(h: &BagActivation, agg: Aggregation) -> Vec<f64> {
    match agg {
        Aggregation::Max => aggregate_max(h),
        Aggregation::NoisyOr => aggregate_noisy_or(h),
    }
}

/// Cross-entropy of the aggregated bag distribution against `label` and
/// its gradient with respect to `h`.
pub fn bag_loss(h: &BagActivation, label: usize, agg: Aggregation) -> (f64, Vec<f64>) {
    let (m, n) = (h.classes, h.instances);
    let mut dh = vec![0.0; m * n];
    match agg {
        Aggregation::Max => {
            let arg = argmax_instances(h);
            let p = aggregate_max(h);
            for i in 0..m {
                let g = p[i] - if i == label { 1.0 } else { 0.0 };
                dh[i * n + arg[i]] = g;
            }
            (-p[label].max(PROB_FLOOR).ln(), dh)
        }
        Aggregation::NoisyOr => {
            let p = h.instance_softmax();
            let q: Vec<f64> = p.chunks(n).map(|row| 1.0 - row.iter().map(|&v| 1.0 - v).product::<f64>()).collect();
            let s: f64 = q.iter().sum();
            let qy = q[label].max(PROB_FLOOR * s);
            let loss = -(qy / s).ln();
            // dL/dq_i = 1/S − [i = y]/q_y
            let dq: Vec<f64> = (0..m).map(|i| 1.0 / s - if i == label { 1.0 / qy } else { 0.0 }).collect();
            let mut dp = vec![0.0; m * n];
            for i in 0..m {
                let row = &p[i * n..(i + 1) * n];
                for j in 0..n {
                    let others: f64 = row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| 1.0 - v).product();
                    dp[i * n + j] = dq[i] * others;
                }
            }
            for j in 0..n {
                let dot: f64 = (0..m).map(|i| p[i * n + j] * dp[i * n + j]).sum();
                for i in 0..m {
                    dh[i * n + j] = p[i * n + j] * (dp[i * n + j] - dot);
                }
            }
            (loss, dh)
        }
    }
}

/// Loss head over a batch of equal-size bags laid out as consecutive
/// instance rows of a `(bags·size, classes)` logit tensor. Returns the mean
/// bag loss and the gradient with respect to the logits.
pub fn bag_batch_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize], bag_size: usize, agg: Aggregation) -> (f64, Tensor<T>) {
    let m = logits.item_len();
    let rows: Vec<f64> = logits.data().iter().map(|v| v.f64()).collect();
    let scale = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(rows.len());
    for (chunk, &y) in rows.chunks(bag_size * m).zip(labels) {
        let h = BagActivation::from_instance_rows(chunk, m);
        let (l, dh) = bag_loss(&h, y, agg);
        total += l;
        for j in 0..bag_size {
            for i in 0..m {
                grad.push(T::of(dh[i * bag_size + j] * scale));
            }
        }
    }
    (total * scale, Tensor::from_vec(logits.shape(), grad))
}

/// Instance indices for one bag per clip: the clip itself plus
/// `bag_size − 1` others of the same class. Returns the bags and whether
/// any class had to be sampled with replacement.
pub fn sample_bags(labels: &[u32], bag_size: usize, rng: &mut Rng) -> Result<(Vec<Vec<usize>>, bool)> {
    if bag_size == 0 {
        return Err(Error::Config("bag size must be at least 1".into()));
    }
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut replaced = false;
    let bags = labels
        .iter()
        .enumerate()
        .map(|(anchor, c)| {
            let others: Vec<usize> = by_class[c].iter().copied().filter(|&i| i != anchor).collect();
            let mut bag = vec![anchor];
            if others.len() >= bag_size - 1 {
                bag.extend(others.choose_multiple(rng, bag_size - 1));
            } else {
                replaced = true;
                let pool = &by_class[c];
                bag.extend((1..bag_size).map(|_| pool[rng.gen_range(0..pool.len())]));
            }
            bag
        })
        .collect();
    Ok((bags, replaced))
}

/// Stack bag instances into one `(bags·size, 3, 50, L)` batch.
pub fn stack_bags(bags: &[Bag]) -> Result<(Tensor<f32>, Vec<usize>, usize)> {
    let size = bags.first().map_or(0, |b| b.instances.len());
    if size == 0 || bags.iter().any(|b| b.instances.len() != size) {
        return Err(Error::Config("bags must be non-empty and of equal size".into()));
    }
    let frames = bags[0].instances[0].frames;
    let mut data = Vec::with_capacity(bags.len() * size * bags[0].instances[0].data.len());
    for p in bags.iter().flat_map(|b| &b.instances) {
        if p.frames != frames {
            return Err(Error::Config("instances differ in length".into()));
        }
        data.extend_from_slice(&p.data);
    }
    let shape = [bags.len() * size, crate::dsp::N_MAPS, crate::dsp::N_BANDS, frames];
    Ok((Tensor::from_vec(&shape, data), bags.iter().map(|b| b.label as usize).collect(), size))
}

/// One SGD step over a minibatch of bags. `net` must end in logits.
/// Returns the mean bag loss plus the L1 term.
pub fn mil_train_step(net: &mut Network<f32>, bags: &[Bag], agg: Aggregation, state: &mut TrainState<f32>, rng: &mut Rng) -> Result<f64> {
    let (x, labels, size) = stack_bags(bags)?;
    let end = net.logits_end();
    let (logits, cache) = net.forward_range(x, &mut Mode::Train(rng), 0..end)?;
    let (loss, d) = bag_batch_loss(&logits, &labels, size, agg);
    let mut grads = net.backward(&cache, d, false).params;
    let params = net.params();
    add_l1_subgradient(&mut grads, &params, state.l1_rho);
    let total = loss + l1_penalty(&params, state.l1_rho);
    if !total.is_finite() {
        return Err(Error::Numerical(format!("bag loss is {total}")));
    }
    state.step(&mut net.params_mut(), &grads)?;
    Ok(total)
}

/// One epoch over `bags` in minibatches; returns the mean step loss.
pub fn mil_train_epoch(
    net: &mut Network<f32>,
    bags: &[Bag],
    agg: Aggregation,
    batch_size: usize,
    state: &mut TrainState<f32>,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    let mut steps = 0;
    for batch in bags.chunks(batch_size.max(1)) {
        total += mil_train_step(net, batch, agg, state, rng)?;
        steps += 1;
    }
    Ok(total / steps.max(1) as f64)
}
