use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::augment::{render_emda, Manifest, ManifestEntry, Origin};
use crate::dsp::{add_deltas, load_wav, power_spectrogram, standardize, vtlp_warp, FeatureMaps, log_mel_filterbank};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stage};

/// Stratified split of the raw clips: within each class a seeded shuffle
/// sends `round(count · train_fraction)` clips (at least one each way) to
/// training. Augmented entries are left out; see [`with_augmented`].
pub fn split_dataset(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<u32, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.origin == Origin::Raw) {
        by_class.entry(e.class_id).or_default().push(e);
    }
    let (mut train, mut test) = (Manifest::default(), Manifest::default());
    for (class, mut entries) in by_class {
        if entries.len() < 2 {
            return Err(Error::Config(format!("class {class} has a single clip; cannot split")));
        }
        entries.shuffle(&mut rng_for(seed, stage::SPLIT, class as u64));
        let n = entries.len();
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train.entries.extend(entries[..n_train].iter().map(|e| (*e).clone()));
        test.entries.extend(entries[n_train..].iter().map(|e| (*e).clone()));
    }
    Ok((train, test))
}

/// `subset` plus every augmented entry of `full` derived only from clips in
/// `subset`.
pub fn with_augmented(full: &Manifest, subset: &Manifest) -> Manifest {
    let ids: HashSet<&str> = subset.entries.iter().map(|e| e.clip_id.as_str()).collect();
    let mut out = subset.clone();
    out.entries.extend(
        full.entries
            .iter()
            .filter(|e| match &e.origin {
                Origin::Raw => false,
                Origin::Emda(r) => ids.contains(r.src1.as_str()) && ids.contains(r.src2.as_str()),
                Origin::Vtlp(r) => ids.contains(r.src.as_str()),
            })
            .cloned(),
    );
    out
}

/// Feature maps of one clip with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub class_id: u32,
    pub maps: FeatureMaps,
}

/// Features of one manifest entry. EMDA entries are read from their
/// rendered file when present and rendered in memory otherwise; VTLP
/// entries warp the filterbank of their source clip.
pub fn clip_features(manifest: &Manifest, base: &Path, entry: &ManifestEntry) -> Result<FeatureMaps> {
    let wave = match &entry.origin {
        Origin::Raw => standardize(&load_wav(&entry.resolve(base))?)?,
        Origin::Emda(recipe) => {
            let path = entry.resolve(base);
            if path.exists() {
                standardize(&load_wav(&path)?)?
            } else {
                render_emda(manifest, base, recipe)?
            }
        }
        Origin::Vtlp(recipe) => {
            let src = manifest
                .find(&recipe.src)
                .ok_or_else(|| Error::Parse(format!("VTLP source '{}' not in manifest", recipe.src)))?;
            let w = standardize(&load_wav(&src.resolve(base))?)?;
            return add_deltas(&vtlp_warp(&power_spectrogram(&w)?, recipe.warp)?);
        }
    };
    add_deltas(&log_mel_filterbank(&wave)?)
}

/// Features for every entry of `subset`, resolving augmentation sources
/// against `full`. Output order follows `subset`.
pub fn load_features(full: &Manifest, subset: &Manifest, base: &Path) -> Result<Vec<ClipFeatures>> {
    subset
        .entries
        .par_iter()
        .map(|e| {
            Ok(ClipFeatures {
                clip_id: e.clip_id.clone(),
                class_id: e.class_id,
                maps: clip_features(full, base, e)?,
            })
        })
        .collect()
}
