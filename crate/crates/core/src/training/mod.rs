//! Dataset splitting, the training loop and patch-voting evaluation.

mod config;
mod data;
mod eval;

pub use config::{RunConfig, Voting, DESK_LEARNING_RATE};
pub use data::{clip_features, load_features, split_dataset, with_augmented, ClipFeatures};
pub use eval::{confusion_difference, evaluate, patch_posteriors, vote, ClipPosterior, EvalReport};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dsp::{crop_patch, FeaturePatch};
use crate::error::{Error, Result};
use crate::mil::{mil_train_step, sample_bags, Bag};
use crate::nnet::loss::{add_l1_subgradient, l1_penalty, softmax_cross_entropy};
use crate::nnet::{Checkpoint, Mode, Network, Plateau, Tensor, TrainState};
use crate::rng::{rng_for, stage, Rng};
use crate::zoo::{ArchId, ArchSpec};

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,split,loss,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.epoch, r.split, r.loss, r.accuracy);
    }
    s
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
    /// Whether any MIL bag had to reuse clips.
    pub bags_with_replacement: bool,
}

/// Random `length`-frame crop, normalized per map.
pub fn random_crop(clip: &ClipFeatures, length: usize, rng: &mut Rng) -> FeaturePatch {
    let t = clip.maps.n_frames;
    let start = if t > length { rng.gen_range(0..=t - length) } else { 0 };
    let mut p = crop_patch(&clip.maps, start, length);
    p.normalize_maps();
    p.label = Some(clip.class_id);
    p
}

fn stack(patches: &[FeaturePatch], input: &[usize]) -> Tensor<f32> {
    let mut shape = vec![patches.len()];
    shape.extend_from_slice(input);
    Tensor::from_vec(&shape, patches.iter().flat_map(|p| p.data.iter().copied()).collect())
}

/// Freshly initialized network for `cfg`.
pub fn init_network(cfg: &RunConfig, n_classes: usize) -> Result<(ArchSpec, Network<f32>)> {
    let spec = ArchSpec::new(ArchId::parse(&cfg.arch)?, n_classes, cfg.patch_frames);
    let mut net = spec.build()?;
    net.init_he(&mut rng_for(cfg.seed, stage::INIT, 0));
    Ok((spec, net))
}

fn supervised_epoch(net: &mut Network<f32>, cfg: &RunConfig, clips: &[ClipFeatures], state: &mut TrainState<f32>, rng: &mut Rng) -> Result<(f64, f64)> {
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(rng);
    let end = net.logits_end();
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for batch in order.chunks(cfg.batch_size) {
        let patches: Vec<FeaturePatch> = batch.iter().map(|&i| random_crop(&clips[i], cfg.patch_frames, rng)).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| clips[i].class_id as usize).collect();
        let x = stack(&patches, net.input_shape());
        let (logits, cache) = net.forward_range(x, &mut Mode::Train(rng), 0..end)?;
        let (ce, probs, d) = softmax_cross_entropy(&logits, &labels);
        if !ce.loss.is_finite() {
            return Err(Error::Numerical(format!("training loss is {}", ce.loss)));
        }
        let k = probs.item_len();
        correct += probs
            .data()
            .chunks(k)
            .zip(&labels)
            .filter(|(row, &y)| row.iter().enumerate().all(|(i, &v)| i == y || v < row[y]))
            .count();
        loss_sum += ce.loss * labels.len() as f64;
        let mut grads = net.backward(&cache, d, false).params;
        add_l1_subgradient(&mut grads, &net.params(), state.l1_rho);
        state.step(&mut net.params_mut(), &grads)?;
    }
    let n = clips.len().max(1) as f64;
    Ok((loss_sum / n + l1_penalty(&net.params(), state.l1_rho), correct as f64 / n))
}

fn mil_epoch(net: &mut Network<f32>, cfg: &RunConfig, clips: &[ClipFeatures], state: &mut TrainState<f32>, rng: &mut Rng) -> Result<(f64, bool)> {
    let labels: Vec<u32> = clips.iter().map(|c| c.class_id).collect();
    let (mut index_bags, replaced) = sample_bags(&labels, cfg.mil_bag_size, rng)?;
    index_bags.shuffle(rng);
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in index_bags.chunks(cfg.batch_size) {
        let bags: Vec<Bag> = chunk
            .iter()
            .map(|idx| Bag {
                instances: idx.iter().map(|&i| random_crop(&clips[i], cfg.patch_frames, rng)).collect(),
                label: clips[idx[0]].class_id,
            })
            .collect();
        total += mil_train_step(net, &bags, cfg.mil_aggregation, state, rng)?;
        steps += 1;
    }
    Ok((total / steps.max(1) as f64, replaced))
}

/// Train from scratch. The learning-rate schedule follows the training
/// loss; `held_out`, when given, is evaluated and logged after every epoch.
/// `observe` sees each metric row as it is produced.
pub fn train_with(
    cfg: &RunConfig,
    n_classes: usize,
    clips: &[ClipFeatures],
    held_out: Option<&[ClipFeatures]>,
    observe: &mut dyn FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    let (spec, mut net) = init_network(cfg, n_classes)?;
    let mut state = TrainState::new(&net.params(), cfg.learning_rate, cfg.seed);
    state.momentum = cfg.momentum;
    state.l1_rho = cfg.l1_rho;
    state.schedule = Plateau::new(cfg.lr_patience, cfg.lr_decay);
    let mut metrics = Vec::new();
    let mut replaced_any = false;
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, stage::TRAIN, epoch as u64);
        let (loss, acc) = if cfg.mil_enabled {
            let (loss, replaced) = mil_epoch(&mut net, cfg, clips, &mut state, &mut rng)?;
            replaced_any |= replaced;
            (loss, f64::NAN)
        } else {
            supervised_epoch(&mut net, cfg, clips, &mut state, &mut rng)?
        };
        let row = MetricRow { epoch, split: "train", loss, accuracy: acc };
        observe(&row);
        metrics.push(row);
        if let Some(test) = held_out {
            let r = evaluate(&net, test, n_classes, cfg.patch_frames, cfg.eval_overlap, cfg.voting)?;
            let row = MetricRow { epoch, split: "test", loss: r.loss, accuracy: r.accuracy };
            observe(&row);
            metrics.push(row);
        }
        state.end_epoch(loss);
    }
    let checkpoint = Checkpoint::from_network(&spec.id.to_string(), n_classes, cfg.patch_frames, &net);
    Ok(TrainOutcome {
        network: net,
        checkpoint,
        metrics,
        bags_with_replacement: replaced_any,
    })
}

pub fn train(cfg: &RunConfig, n_classes: usize, clips: &[ClipFeatures], held_out: Option<&[ClipFeatures]>) -> Result<TrainOutcome> {
    train_with(cfg, n_classes, clips, held_out, &mut |_| {})
}
