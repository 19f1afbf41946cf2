//! Named architectures and a compact descriptor language for custom ones.
//!
//! A descriptor is a comma-separated block list, e.g.
//! `conv16,conv16,pool1x2,fc64`. Pools are written time×freq. Every conv and
//! hidden fc is followed by a ReLU, every hidden fc additionally by dropout;
//! the output fc and softmax are appended.

use std::fmt;

use crate::dsp::{N_BANDS, N_MAPS};
use crate::error::{Error, Result};
use crate::nnet::{Checkpoint, Conv3x3, Dropout, Layer, Linear, MaxPool, Network, Scalar};

/// Dropout keep probability of hidden fully connected layers.
pub const KEEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Conv(usize),
    Pool { time: usize, freq: usize },
    Fc(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchId {
    A,
    B,
    AMini,
    Custom(Vec<Block>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub id: ArchId,
    pub n_classes: usize,
    pub input_frames: usize,
}

fn conv_trunk(first: usize, second: usize) -> Vec<Block> {
    use Block::*;
    vec![
        Conv(first),
        Conv(first),
        Pool { time: 1, freq: 2 },
        Conv(second),
        Conv(second),
        Pool { time: 2, freq: 2 },
    ]
}

impl ArchId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(ArchId::A),
            "B" => Ok(ArchId::B),
            "A-mini" => Ok(ArchId::AMini),
            _ => match s.strip_prefix("custom:") {
                Some(desc) => parse_blocks(desc).map(ArchId::Custom),
                None => Err(Error::Config(format!("unknown architecture {s:?}"))),
            },
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        use Block::*;
        match self {
            ArchId::A => [conv_trunk(64, 128), vec![Fc(1024), Fc(1024)]].concat(),
            ArchId::B => [
                conv_trunk(64, 128),
                vec![Conv(256), Conv(256), Pool { time: 2, freq: 1 }, Fc(2048), Fc(2048)],
            ]
            .concat(),
            ArchId::AMini => [conv_trunk(16, 32), vec![Fc(128), Fc(128)]].concat(),
            ArchId::Custom(b) => b.clone(),
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchId::A => f.write_str("A"),
            ArchId::B => f.write_str("B"),
            ArchId::AMini => f.write_str("A-mini"),
            ArchId::Custom(blocks) => {
                f.write_str("custom:")?;
                for (i, b) in blocks.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match b {
                        Block::Conv(c) => write!(f, "conv{c}")?,
                        Block::Pool { time, freq } => write!(f, "pool{time}x{freq}")?,
                        Block::Fc(w) => write!(f, "fc{w}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

fn parse_blocks(desc: &str) -> Result<Vec<Block>> {
    let bad = |t: &str| Error::Config(format!("bad architecture block {t:?}"));
    let num = |s: &str, t: &str| s.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| bad(t));
    desc.split(',')
        .map(str::trim)
        .map(|t| {
            if let Some(r) = t.strip_prefix("conv") {
                Ok(Block::Conv(num(r, t)?))
            } else if let Some(r) = t.strip_prefix("pool") {
                let (a, b) = r.split_once('x').ok_or_else(|| bad(t))?;
                Ok(Block::Pool { time: num(a, t)?, freq: num(b, t)? })
            } else if let Some(r) = t.strip_prefix("fc") {
                Ok(Block::Fc(num(r, t)?))
            } else {
                Err(bad(t))
            }
        })
        .collect()
}

impl ArchSpec {
    pub fn new(id: ArchId, n_classes: usize, input_frames: usize) -> Self {
        Self { id, n_classes, input_frames }
    }

    /// Per-item input shape `(maps, bands, frames)`.
    pub fn input_shape(&self) -> [usize; 3] {
        [N_MAPS, N_BANDS, self.input_frames]
    }

    /// Layer chain with zero-valued parameters.
    pub fn layers<T: Scalar>(&self) -> Result<Vec<Layer<T>>> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        let mut layers = Vec::new();
        let [mut maps, mut freq, mut time] = self.input_shape();
        let mut flat: Option<usize> = None;
        for (i, block) in self.id.blocks().into_iter().enumerate() {
            match block {
                Block::Conv(out) => {
                    if flat.is_some() || freq < 3 || time < 3 {
                        return Err(Error::shape(layers.len(), format!("block {i}: conv on {maps}×{freq}×{time}")));
                    }
                    layers.push(Layer::Conv3x3(Conv3x3::zeros(maps, out)));
                    layers.push(Layer::Relu);
                    (maps, freq, time) = (out, freq - 2, time - 2);
                }
                Block::Pool { time: pt, freq: pf } => {
                    if flat.is_some() || freq < pf || time < pt {
                        return Err(Error::shape(layers.len(), format!("block {i}: pool {pt}x{pf} on {freq}×{time}")));
                    }
                    layers.push(Layer::MaxPool(MaxPool { time: pt, freq: pf }));
                    (freq, time) = (freq / pf, time / pt);
                }
                Block::Fc(width) => {
                    let inputs = match flat {
                        Some(n) => n,
                        None => {
                            layers.push(Layer::Flatten);
                            maps * freq * time
                        }
                    };
                    layers.push(Layer::Linear(Linear::zeros(inputs, width)));
                    layers.push(Layer::Relu);
                    layers.push(Layer::Dropout(Dropout { keep: KEEP }));
                    flat = Some(width);
                }
            }
        }
        let inputs = match flat {
            Some(n) => n,
            None => {
                layers.push(Layer::Flatten);
                maps * freq * time
            }
        };
        layers.push(Layer::Linear(Linear::zeros(inputs, self.n_classes)));
        layers.push(Layer::Softmax);
        Ok(layers)
    }

    /// Network with zero parameters; call [`Network::init_he`] before use.
    pub fn build<T: Scalar>(&self) -> Result<Network<T>> {
        Network::new(&self.input_shape(), self.layers()?)
    }

    /// Parameter total by shape algebra alone.
    pub fn param_count(&self) -> Result<usize> {
        let layers = self.layers::<f32>()?;
        Ok(layers
            .iter()
            .map(|l| match l {
                Layer::Conv3x3(c) => c.out_maps() * (c.in_maps() * 9 + 1),
                Layer::Linear(f) => f.outputs() * (f.inputs() + 1),
                _ => 0,
            })
            .sum())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self::new(ArchId::parse(&ck.arch)?, ck.n_classes, ck.input_frames))
    }
}

/// Rebuild the network a checkpoint was saved from and load its weights.
pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<Network<f32>> {
    let mut net = ArchSpec::from_checkpoint(ck)?.build()?;
    ck.load_into(&mut net)?;
    Ok(net)
}

/// Number of leading layers producing the post-ReLU activation of the
/// second-to-last fully connected layer.
pub fn feature_end<T: Scalar>(net: &Network<T>) -> Option<usize> {
    let linear: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Linear(_)))
        .map(|(i, _)| i)
        .collect();
    let pen = *linear.iter().rev().nth(1)?;
    match net.layers().get(pen + 1) {
        Some(Layer::Relu) => Some(pen + 2),
        _ => Some(pen + 1),
    }
}
