//! Class-preserving data augmentation.
//!
//! EMDA mixes two clips of the same class with a random weight, a random
//! delay of the second clip and an independent random peaking EQ on each
//! source. VTLP here is a feature-level perturbation: the mel filterbank's
//! edge frequencies are warped before the log energies are taken.
//!
//! [`augment_dataset`] only plans: it appends manifest entries carrying
//! every drawn parameter. [`render_emda`] turns a planned entry into audio,
//! so any entry can be regenerated from the manifest alone.

mod emda;
mod eq;
mod manifest;

pub use emda::{emda_mix, emda_sample, EmdaConfig, EmdaParams};
pub use eq::{apply_eq, design_peaking_eq, BiquadCoeffs, EqParams, F0_RANGE, GAIN_RANGE_DB, Q_RANGE};
pub use manifest::{EmdaRecipe, Manifest, ManifestEntry, Origin, VtlpRecipe};

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::dsp::{load_wav, standardize, write_wav_pcm16, Waveform};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stage};

pub const VTLP_RANGE: (f64, f64) = (0.9, 1.1);
/// Directory, relative to the manifest, that receives rendered EMDA clips.
pub const AUG_DIR: &str = "aug";

/// Append `n_total` augmented entries, balanced across classes.
///
/// Classes (ascending id) receive `n_total / M` entries each and the first
/// `n_total % M` one extra. Within a class, `round(count * emda_fraction)`
/// entries are EMDA mixes and the rest VTLP warps. Item `i` draws from its
/// own seed stream, so the plan is a pure function of the arguments.
pub fn augment_dataset(
    manifest: &Manifest,
    n_total: usize,
    emda_fraction: f64,
    seed: u64,
    max_delay: Option<f64>,
) -> Result<Manifest> {
    if manifest.is_empty() {
        return Err(Error::domain("cannot augment an empty manifest"));
    }
    if !(0.0..=1.0).contains(&emda_fraction) {
        return Err(Error::domain(format!("emda fraction {emda_fraction} outside [0, 1]")));
    }
    let mut out = manifest.clone();
    if n_total == 0 {
        return Ok(out);
    }
    let mut sources: BTreeMap<u32, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.origin == Origin::Raw) {
        sources.entry(e.class_id).or_default().push(e);
    }
    if sources.is_empty() {
        return Err(Error::domain("manifest has no raw clips to augment"));
    }
    let taken: HashSet<&str> = manifest.entries.iter().map(|e| e.clip_id.as_str()).collect();
    let n_classes = sources.len();
    let mut index = 0usize;
    for (rank, (&class_id, clips)) in sources.iter().enumerate() {
        let count = n_total / n_classes + usize::from(rank < n_total % n_classes);
        let n_emda = (count as f64 * emda_fraction).round() as usize;
        for k in 0..count {
            let mut rng = rng_for(seed, stage::AUGMENT, index as u64);
            let clip_id = format!("aug{index:05}");
            if taken.contains(clip_id.as_str()) {
                return Err(Error::domain(format!("clip id {clip_id} already in manifest")));
            }
            let entry = if k < n_emda {
                let (s1, s2) = if clips.len() >= 2 {
                    let pair: Vec<&&ManifestEntry> = clips.choose_multiple(&mut rng, 2).collect();
                    (pair[0], pair[1])
                } else {
                    (&clips[0], &clips[0])
                };
                ManifestEntry {
                    path: format!("{AUG_DIR}/{clip_id}.wav"),
                    clip_id,
                    class_id,
                    origin: Origin::Emda(EmdaRecipe {
                        src1: s1.clip_id.clone(),
                        src2: s2.clip_id.clone(),
                        params: EmdaParams::draw(&mut rng, max_delay),
                    }),
                }
            } else {
                let src = clips.choose(&mut rng).expect("class has a clip");
                ManifestEntry {
                    clip_id,
                    path: src.path.clone(),
                    class_id,
                    origin: Origin::Vtlp(VtlpRecipe {
                        src: src.clip_id.clone(),
                        warp: rng.gen_range(VTLP_RANGE.0..VTLP_RANGE.1),
                    }),
                }
            };
            out.entries.push(entry);
            index += 1;
        }
    }
    Ok(out)
}

/// Synthesize the audio of an EMDA entry from its recorded recipe.
pub fn render_emda(manifest: &Manifest, base: &Path, recipe: &EmdaRecipe) -> Result<Waveform> {
    let load = |id: &str| -> Result<Waveform> {
        let e = manifest
            .find(id)
            .ok_or_else(|| Error::Parse(format!("EMDA source '{id}' not in manifest")))?;
        standardize(&load_wav(&e.resolve(base))?)
    };
    emda_mix(&load(&recipe.src1)?, &load(&recipe.src2)?, &recipe.params, true)
}

/// Render and write the WAV file of every EMDA entry; returns how many.
pub fn materialize(manifest: &Manifest, base: &Path) -> Result<usize> {
    let todo: Vec<(&ManifestEntry, &EmdaRecipe)> = manifest
        .entries
        .iter()
        .filter_map(|e| match &e.origin {
            Origin::Emda(r) => Some((e, r)),
            _ => None,
        })
        .collect();
    if !todo.is_empty() {
        let dir = base.join(AUG_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    todo.par_iter()
        .map(|(entry, recipe)| {
            let w = render_emda(manifest, base, recipe)?;
            write_wav_pcm16(&entry.resolve(base), &w)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(todo.len())
}
