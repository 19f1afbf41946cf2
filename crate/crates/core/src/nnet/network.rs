use std::ops::Range;

use super::layer::{LayerCache, Mode};
use super::{Layer, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stage, Rng};

/// Sequential layer chain with a fixed per-item input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    input_shape: Vec<usize>,
}

/// Activations recorded by a forward pass over `range`.
pub struct Cache<T> {
    pub(super) range: Range<usize>,
    pub(super) entries: Vec<LayerCache<T>>,
}

/// Result of a backward pass. `params` follows [`Network::params`] order.
pub struct Grads<T> {
    pub params: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Self {
            layers,
            input_shape: input_shape.to_vec(),
        };
        net.shapes()?;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-item output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|m| Error::shape(i, m))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes()
            .expect("validated at construction")
            .pop()
            .unwrap_or_else(|| self.input_shape.clone())
    }

    /// Number of layers before a trailing softmax (all layers if none).
    pub fn logits_end(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Weights and biases in layer order (weight before bias).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Names matching [`Network::params`], e.g. `0.conv3x3.weight`.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.params().is_some())
            .flat_map(|(i, l)| {
                let k = l.kind();
                [format!("{i}.{k}.weight"), format!("{i}.{k}.bias")]
            })
            .collect()
    }

    /// Layer index owning each entry of [`Network::params`].
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.params().is_some())
            .flat_map(|(i, _)| [i, i])
            .collect()
    }

    pub fn init_he(&mut self, rng: &mut Rng) {
        for l in &mut self.layers {
            l.init_he(rng);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        use super::layer::{Conv3x3, Linear};
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv3x3(c) => Layer::Conv3x3(Conv3x3 {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                }),
                Layer::Linear(c) => Layer::Linear(Linear {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                }),
                Layer::MaxPool(p) => Layer::MaxPool(*p),
                Layer::Relu => Layer::Relu,
                Layer::Flatten => Layer::Flatten,
                Layer::Dropout(d) => Layer::Dropout(*d),
                Layer::Softmax => Layer::Softmax,
            })
            .collect();
        Network {
            layers,
            input_shape: self.input_shape.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>, layer: usize) -> Result<()> {
        let expect = if layer == 0 {
            self.input_shape.clone()
        } else {
            self.shapes()?[layer - 1].clone()
        };
        if x.shape().len() != expect.len() + 1 || x.item_shape() != expect.as_slice() {
            return Err(Error::shape(
                layer,
                format!("expected items of shape {expect:?}, got {:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn run(&self, mut x: Tensor<T>, mode: &mut Mode<'_>, range: Range<usize>, keep: bool) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        if range.end > self.layers.len() || range.start > range.end {
            return Err(Error::shape(range.start, format!("bad layer range {range:?}")));
        }
        self.check_input(&x, range.start)?;
        let mut caches = Vec::with_capacity(if keep { range.len() } else { 0 });
        for i in range {
            let (y, c) = match mode {
                Mode::Replay(seed) => {
                    let layer_seed = derive_seed(*seed, stage::GRADCHECK, i as u64);
                    self.layers[i].forward(x, &mut Mode::Replay(layer_seed), keep)
                }
                _ => self.layers[i].forward(x, mode, keep),
            };
            x = y;
            if let Some(c) = c {
                caches.push(c);
            }
        }
        Ok((x, caches))
    }

    /// Forward through all layers, recording activations for backward.
    pub fn forward(&self, x: Tensor<T>, mut mode: Mode<'_>) -> Result<(Tensor<T>, Cache<T>)> {
        self.forward_range(x, &mut mode, 0..self.layers.len())
    }

    /// Forward through `layers[range]`; `x` must be the input of
    /// `layers[range.start]`.
    pub fn forward_range(&self, x: Tensor<T>, mode: &mut Mode<'_>, range: Range<usize>) -> Result<(Tensor<T>, Cache<T>)> {
        let (y, entries) = self.run(x, mode, range.clone(), true)?;
        Ok((y, Cache { range, entries }))
    }

    /// Pass through `layers[range]` in `mode` without caching.
    pub fn apply_range(&self, x: Tensor<T>, mode: &mut Mode<'_>, range: Range<usize>) -> Result<Tensor<T>> {
        Ok(self.run(x, mode, range, false)?.0)
    }

    /// Evaluation-mode pass through `layers[range]` without caching.
    pub fn infer_range(&self, x: Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        Ok(self.run(x, &mut Mode::Eval, range, false)?.0)
    }

    /// Evaluation-mode pass through the whole network.
    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.infer_range(x, 0..self.layers.len())
    }

    /// Backpropagate `d_out` through the cached range. Parameters of layers
    /// outside the range get zero gradients.
    pub fn backward(&self, cache: &Cache<T>, d_out: Tensor<T>, need_input: bool) -> Grads<T> {
        let mut per_layer: Vec<Option<(Tensor<T>, Tensor<T>)>> = (0..self.layers.len()).map(|_| None).collect();
        let mut d = d_out;
        let start = cache.range.start;
        for (i, c) in cache.range.clone().zip(&cache.entries).rev() {
            let want_dx = i > start || need_input;
            let (dx, pg) = self.layers[i].backward(c, d, want_dx);
            per_layer[i] = pg;
            match dx {
                Some(dx) => d = dx,
                None => {
                    d = Tensor::zeros(&[0]);
                    break;
                }
            }
        }
        let params = self
            .layers
            .iter()
            .zip(per_layer)
            .filter_map(|(l, g)| {
                l.params().map(|(w, b)| g.unwrap_or_else(|| (Tensor::zeros(w.shape()), Tensor::zeros(b.shape()))))
            })
            .flat_map(|(w, b)| [w, b])
            .collect();
        Grads {
            params,
            input: need_input.then_some(d).filter(|t| !t.is_empty()),
        }
    }
}
