use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::rng::Rng;

/// Forward-pass mode. Training mode samples dropout masks from the given
/// random source.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
    /// Training mode whose dropout masks depend only on the seed and the
    /// layer index, so a partial re-run reproduces them.
    Replay(u64),
}

/// 3×3 convolution, stride 1, no padding. `weight` is `(out, in, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Fully connected layer. `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Max pooling over `(maps, freq, time)` inputs with stride equal to the
/// window; trailing rows and columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub time: usize,
    pub freq: usize,
}

/// Inverted dropout: surviving units are scaled by `1 / keep` at training
/// time, evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv3x3(Conv3x3<T>),
    MaxPool(MaxPool),
    Relu,
    Flatten,
    Linear(Linear<T>),
    Dropout(Dropout),
    Softmax,
}

pub(crate) enum LayerCache<T> {
    Conv { input: Tensor<T> },
    Pool { argmax: Vec<u32>, in_shape: Vec<usize> },
    Relu { output: Tensor<T> },
    Flatten { in_shape: Vec<usize> },
    Linear { input: Tensor<T> },
    Dropout { mask: Option<Vec<T>> },
    Softmax { output: Tensor<T> },
}

/// Parameter gradients of one layer, `(weight, bias)`.
pub(crate) type ParamGrads<T> = (Tensor<T>, Tensor<T>);

impl<T: Scalar> Conv3x3<T> {
    pub fn zeros(in_maps: usize, out_maps: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_maps, in_maps, 3, 3]),
            bias: Tensor::zeros(&[out_maps]),
        }
    }

    pub fn in_maps(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_maps(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, f: usize, t: usize, cols: &mut [T]) {
    let (ho, wo) = (f - 2, t - 2);
    let p = ho * wo;
    for ci in 0..c {
        for kf in 0..3 {
            for kt in 0..3 {
                let row = (ci * 9 + kf * 3 + kt) * p;
                for oy in 0..ho {
                    let src = ci * f * t + (oy + kf) * t + kt;
                    cols[row + oy * wo..row + (oy + 1) * wo].copy_from_slice(&x[src..src + wo]);
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], c: usize, f: usize, t: usize, dx: &mut [T]) {
    let (ho, wo) = (f - 2, t - 2);
    let p = ho * wo;
    for ci in 0..c {
        for kf in 0..3 {
            for kt in 0..3 {
                let row = (ci * 9 + kf * 3 + kt) * p;
                for oy in 0..ho {
                    let dst = ci * f * t + (oy + kf) * t + kt;
                    for (d, &s) in dx[dst..dst + wo].iter_mut().zip(&cols[row + oy * wo..row + (oy + 1) * wo]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv3x3(_) => "conv3x3",
            Layer::MaxPool(_) => "maxpool",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
            Layer::Dropout(_) => "dropout",
            Layer::Softmax => "softmax",
        }
    }

    pub fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv3x3(c) => Some((&c.weight, &c.bias)),
            Layer::Linear(l) => Some((&l.weight, &l.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv3x3(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Linear(l) => Some((&mut l.weight, &mut l.bias)),
            _ => None,
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Conv3x3(c) => match *input {
                [ch, f, t] if ch == c.in_maps() && f >= 3 && t >= 3 => Ok(vec![c.out_maps(), f - 2, t - 2]),
                _ => Err(format!("conv({},{}) cannot take input {input:?}", c.in_maps(), c.out_maps())),
            },
            Layer::MaxPool(p) => match *input {
                [ch, f, t] if f >= p.freq && t >= p.time && p.freq > 0 && p.time > 0 => {
                    Ok(vec![ch, f / p.freq, t / p.time])
                }
                _ => Err(format!("pool {}x{} cannot take input {input:?}", p.time, p.freq)),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Linear(l) => match *input {
                [n] if n == l.inputs() => Ok(vec![l.outputs()]),
                _ => Err(format!("linear {}→{} cannot take input {input:?}", l.inputs(), l.outputs())),
            },
            Layer::Softmax => match *input {
                [_] => Ok(input.to_vec()),
                _ => Err(format!("softmax needs a vector input, got {input:?}")),
            },
            Layer::Relu | Layer::Dropout(_) => Ok(input.to_vec()),
        }
    }

    /// Zero-mean Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    pub fn init_he(&mut self, rng: &mut Rng) {
        if let Some((w, b)) = self.params_mut() {
            let fan_in: usize = w.shape()[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            for v in w.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::of(z * std);
            }
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub(crate) fn forward(&self, x: Tensor<T>, mode: &mut Mode<'_>, keep_cache: bool) -> (Tensor<T>, Option<LayerCache<T>>) {
        let n = x.batch();
        match self {
            Layer::Conv3x3(conv) => {
                let (c, f, t) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (co, ho, wo) = (conv.out_maps(), f - 2, t - 2);
                let (p, c9) = (ho * wo, c * 9);
                let mut out = vec![T::zero(); n * co * p];
                let w = conv.weight.data();
                let bias = conv.bias.data();
                out.par_chunks_mut(co * p)
                    .zip(x.data().par_chunks(c * f * t))
                    .for_each_init(
                        || vec![T::zero(); c9 * p],
                        |cols, (o, xi)| {
                            im2col(xi, c, f, t, cols);
                            for (row, &b) in o.chunks_mut(p).zip(bias) {
                                row.iter_mut().for_each(|v| *v = b);
                            }
                            gemm(co, c9, p, T::one(), MatRef::rm(w, c9), MatRef::rm(cols, p), T::one(), o);
                        },
                    );
                let y = Tensor::from_vec(&[n, co, ho, wo], out);
                (y, keep_cache.then_some(LayerCache::Conv { input: x }))
            }
            Layer::MaxPool(pool) => {
                let (c, f, t) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (fo, to) = (f / pool.freq, t / pool.time);
                let mut out = Vec::with_capacity(n * c * fo * to);
                let mut argmax = Vec::with_capacity(if keep_cache { n * c * fo * to } else { 0 });
                let xd = x.data();
                for plane in 0..n * c {
                    let base = plane * f * t;
                    for oy in 0..fo {
                        for ox in 0..to {
                            let mut best = base + oy * pool.freq * t + ox * pool.time;
                            for dy in 0..pool.freq {
                                for dx in 0..pool.time {
                                    let i = base + (oy * pool.freq + dy) * t + ox * pool.time + dx;
                                    if xd[i] > xd[best] {
                                        best = i;
                                    }
                                }
                            }
                            out.push(xd[best]);
                            if keep_cache {
                                argmax.push((best - (plane / c) * c * f * t) as u32);
                            }
                        }
                    }
                }
                let y = Tensor::from_vec(&[n, c, fo, to], out);
                let cache = keep_cache.then(|| LayerCache::Pool {
                    argmax,
                    in_shape: x.shape().to_vec(),
                });
                (y, cache)
            }
            Layer::Relu => {
                let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
                let cache = keep_cache.then(|| LayerCache::Relu { output: y.clone() });
                (y, cache)
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let len = x.item_len();
                (x.reshape(&[n, len]), keep_cache.then_some(LayerCache::Flatten { in_shape }))
            }
            Layer::Linear(lin) => {
                let (i, o) = (lin.inputs(), lin.outputs());
                let mut out = Vec::with_capacity(n * o);
                for _ in 0..n {
                    out.extend_from_slice(lin.bias.data());
                }
                gemm(n, i, o, T::one(), MatRef::rm(x.data(), i), MatRef::t(lin.weight.data(), i), T::one(), &mut out);
                let y = Tensor::from_vec(&[n, o], out);
                (y, keep_cache.then_some(LayerCache::Linear { input: x }))
            }
            Layer::Dropout(d) => match mode {
                Mode::Eval => (x, keep_cache.then_some(LayerCache::Dropout { mask: None })),
                Mode::Replay(seed) => {
                    let mut rng = crate::rng::seeded(*seed);
                    self.forward(x, &mut Mode::Train(&mut rng), keep_cache)
                }
                Mode::Train(rng) => {
                    let scale = T::of(1.0 / d.keep);
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < d.keep { scale } else { T::zero() })
                        .collect();
                    let mut y = x;
                    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
                        *v = *v * m;
                    }
                    (y, keep_cache.then_some(LayerCache::Dropout { mask: Some(mask) }))
                }
            },
            Layer::Softmax => {
                let k = x.shape()[1];
                let mut y = x;
                for row in y.data_mut().chunks_mut(k) {
                    super::loss::softmax_in_place(row);
                }
                let cache = keep_cache.then(|| LayerCache::Softmax { output: y.clone() });
                (y, cache)
            }
        }
    }

    /// Propagate `dy` back through the layer. Returns the input gradient
    /// (when requested) and the parameter gradients summed over the batch.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        dy: Tensor<T>,
        need_dx: bool,
    ) -> (Option<Tensor<T>>, Option<ParamGrads<T>>) {
        match (self, cache) {
            (Layer::Conv3x3(conv), LayerCache::Conv { input }) => {
                let n = input.batch();
                let (c, f, t) = (input.shape()[1], input.shape()[2], input.shape()[3]);
                let (co, p, c9) = (conv.out_maps(), (f - 2) * (t - 2), c * 9);
                let per_sample: Vec<(Vec<T>, Vec<T>)> = input
                    .data()
                    .par_chunks(c * f * t)
                    .zip(dy.data().par_chunks(co * p))
                    .map_init(
                        || vec![T::zero(); c9 * p],
                        |cols, (xi, gi)| {
                            im2col(xi, c, f, t, cols);
                            let mut dw = vec![T::zero(); co * c9];
                            gemm(co, p, c9, T::one(), MatRef::rm(gi, p), MatRef::t(cols, p), T::zero(), &mut dw);
                            let db: Vec<T> = gi.chunks(p).map(|r| r.iter().copied().sum()).collect();
                            (dw, db)
                        },
                    )
                    .collect();
                let mut dw = vec![T::zero(); co * c9];
                let mut db = vec![T::zero(); co];
                for (w_i, b_i) in &per_sample {
                    dw.iter_mut().zip(w_i).for_each(|(a, &b)| *a = *a + b);
                    db.iter_mut().zip(b_i).for_each(|(a, &b)| *a = *a + b);
                }
                let dx = need_dx.then(|| {
                    let mut dx = vec![T::zero(); n * c * f * t];
                    let w = conv.weight.data();
                    dx.par_chunks_mut(c * f * t)
                        .zip(dy.data().par_chunks(co * p))
                        .for_each_init(
                            || vec![T::zero(); c9 * p],
                            |dcols, (dxi, gi)| {
                                gemm(c9, co, p, T::one(), MatRef::t(w, c9), MatRef::rm(gi, p), T::zero(), dcols);
                                col2im_add(dcols, c, f, t, dxi);
                            },
                        );
                    Tensor::from_vec(input.shape(), dx)
                });
                (
                    dx,
                    Some((
                        Tensor::from_vec(conv.weight.shape(), dw),
                        Tensor::from_vec(conv.bias.shape(), db),
                    )),
                )
            }
            (Layer::MaxPool(_), LayerCache::Pool { argmax, in_shape }) => {
                let dx = need_dx.then(|| {
                    let item: usize = in_shape[1..].iter().product();
                    let per_item = dy.item_len();
                    let mut dx = vec![T::zero(); in_shape.iter().product()];
                    for (j, (&g, &src)) in dy.data().iter().zip(argmax).enumerate() {
                        let idx = (j / per_item) * item + src as usize;
                        dx[idx] = dx[idx] + g;
                    }
                    Tensor::from_vec(in_shape, dx)
                });
                (dx, None)
            }
            (Layer::Relu, LayerCache::Relu { output }) => {
                let mut dx = dy;
                for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
                (Some(dx), None)
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => (Some(dy.reshape(in_shape)), None),
            (Layer::Linear(lin), LayerCache::Linear { input }) => {
                let (n, i, o) = (input.batch(), lin.inputs(), lin.outputs());
                let mut dw = vec![T::zero(); o * i];
                gemm(o, n, i, T::one(), MatRef::t(dy.data(), o), MatRef::rm(input.data(), i), T::zero(), &mut dw);
                let mut db = vec![T::zero(); o];
                for row in dy.data().chunks(o) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                }
                let dx = need_dx.then(|| {
                    let mut dx = vec![T::zero(); n * i];
                    gemm(n, o, i, T::one(), MatRef::rm(dy.data(), o), MatRef::rm(lin.weight.data(), i), T::zero(), &mut dx);
                    Tensor::from_vec(input.shape(), dx)
                });
                (
                    dx,
                    Some((
                        Tensor::from_vec(lin.weight.shape(), dw),
                        Tensor::from_vec(lin.bias.shape(), db),
                    )),
                )
            }
            (Layer::Dropout(_), LayerCache::Dropout { mask }) => {
                let mut dx = dy;
                if let Some(mask) = mask {
                    for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *g = *g * m;
                    }
                }
                (Some(dx), None)
            }
            (Layer::Softmax, LayerCache::Softmax { output }) => {
                let k = output.shape()[1];
                let mut dx = dy;
                for (g, y) in dx.data_mut().chunks_mut(k).zip(output.data().chunks(k)) {
                    let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                    for (gi, &yi) in g.iter_mut().zip(y) {
                        *gi = yi * (*gi - dot);
                    }
                }
                (Some(dx), None)
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}
