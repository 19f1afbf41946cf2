//! Audio event recognition toolkit.
//!
//! Pipeline: waveform → log-filterbank patches ([`dsp`]) → CNN classifier
//! ([`nnet`], [`zoo`], [`training`], optionally [`mil`]) trained on
//! augmented data ([`augment`]) → L2-normalized penultimate-layer audio
//! features ([`features`]) → pairwise-ranking highlight scorer
//! ([`highlight`]). [`synth`] generates deterministic synthetic corpora for
//! all of the above.

pub mod error;
pub mod rng;

pub mod augment;
pub mod dsp;
pub mod nnet;
pub mod zoo;
pub mod mil;
pub mod synth;
pub mod training;
pub mod features;
pub mod highlight;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
