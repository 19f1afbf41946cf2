use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index;

use super::layer::{LayerCache, Mode};
use super::loss::{cross_entropy, cross_entropy_grad, softmax_cross_entropy, add_l1_subgradient, l1_penalty};
use super::{Cache, Layer, Network, Tensor};
use crate::error::Result;
use crate::rng::{rng_for, stage};

/// Options for [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameterized layer and for the input.
    pub samples: usize,
    pub rho: f64,
    /// Enables dropout with masks fixed by this seed.
    pub dropout_seed: Option<u64>,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Multiplies the analytic gradient; for negative controls.
    pub corrupt: Option<f64>,
    pub tolerance: f64,
    pub check_input: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 200,
            rho: super::loss::L1_RHO,
            dropout_seed: None,
            seed: 0,
            corrupt: None,
            tolerance: 1e-4,
            check_input: true,
        }
    }
}

/// Result for one layer (or the network input when `layer` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: Option<usize>,
    pub kind: &'static str,
    pub checked: usize,
    /// Coordinates dropped because the step crossed a ReLU or pooling kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<LayerCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let name = c.layer.map_or("input".to_string(), |i| i.to_string());
            writeln!(
                f,
                "{name:>5} {:<8} checked={:<4} skipped={:<3} max_rel_err={:.3e}",
                c.kind, c.checked, c.skipped, c.max_rel_err
            )?;
        }
        write!(f, "max_rel_err={:.3e} tolerance={:.1e}", self.max_rel_err(), self.tolerance)
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Cross-entropy head for networks ending in softmax (unfused) or logits.
fn cross_entropy_head<'a>(labels: &'a [usize], ends_in_softmax: bool) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) + 'a {
    move |out| {
        if ends_in_softmax {
            (cross_entropy(out, labels).loss, cross_entropy_grad(out, labels))
        } else {
            let (ce, _, g) = softmax_cross_entropy(out, labels);
            (ce.loss, g)
        }
    }
}

/// Fingerprint of the ReLU sign pattern and pooling winners.
fn kink_pattern(cache: &Cache<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for e in &cache.entries {
        match e {
            LayerCache::Relu { output } => {
                for v in output.data() {
                    (*v > 0.0).hash(&mut h);
                }
            }
            LayerCache::Pool { argmax, .. } => argmax.hash(&mut h),
            _ => {}
        }
    }
    h.finish()
}

struct Probe<H> {
    net: Network<f64>,
    head: H,
    seed: Option<u64>,
}

impl<H: Fn(&Tensor<f64>) -> (f64, Tensor<f64>)> Probe<H> {
    fn mode(&self) -> Mode<'static> {
        self.seed.map_or(Mode::Eval, Mode::Replay)
    }

    /// Data loss and kink fingerprint of `layers[from..]` applied to `x`.
    fn eval(&self, x: Tensor<f64>, from: usize) -> Result<(f64, u64)> {
        let n = self.net.layers().len();
        let (out, cache) = self.net.forward_range(x, &mut self.mode(), from..n)?;
        Ok(((self.head)(&out).0, kink_pattern(&cache)))
    }
}

/// Compare backpropagated gradients of batch-mean cross-entropy plus the L1
/// term against central finite differences.
pub fn grad_check(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let ends_in_softmax = matches!(net.layers().last(), Some(Layer::Softmax));
    grad_check_head(net, x, cross_entropy_head(labels, ends_in_softmax), cfg)
}

/// [`grad_check`] with an arbitrary loss `head`, which maps the network
/// output to the data loss and its gradient. The L1 term is added on top.
pub fn grad_check_head<H>(net: &Network<f64>, x: &Tensor<f64>, head: H, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    H: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let mut probe = Probe {
        net: net.clone(),
        head,
        seed: cfg.dropout_seed,
    };
    let n_layers = net.layers().len();

    let (out, cache) = net.forward_range(x.clone(), &mut probe.mode(), 0..n_layers)?;
    let d_out = (probe.head)(&out).1;
    let mut grads = net.backward(&cache, d_out, cfg.check_input);
    add_l1_subgradient(&mut grads.params, &net.params(), cfg.rho);
    if let Some(f) = cfg.corrupt {
        for g in grads.params.iter_mut().chain(grads.input.iter_mut()) {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }

    let mut rng = rng_for(cfg.seed, stage::GRADCHECK, 0);
    let mut checks = Vec::new();
    let eps = cfg.eps;
    let owners = net.param_layers();

    if cfg.check_input {
        let (_, base) = probe.eval(x.clone(), 0)?;
        let analytic = grads.input.as_ref().expect("input gradient requested");
        let mut check = LayerCheck { layer: None, kind: "input", checked: 0, skipped: 0, max_rel_err: 0.0 };
        let candidates = index::sample(&mut rng, x.len(), x.len().min(cfg.samples * 10));
        for i in candidates {
            if check.checked == cfg.samples {
                break;
            }
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let (lp, pp) = probe.eval(xp, 0)?;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let (lm, pm) = probe.eval(xm, 0)?;
            if pp != base || pm != base {
                check.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            check.max_rel_err = check.max_rel_err.max(relative_error(analytic.data()[i], fd));
            check.checked += 1;
        }
        checks.push(check);
    }

    let l1_base = l1_penalty(&net.params(), cfg.rho);
    let mut p = 0;
    while p < owners.len() {
        let layer = owners[p];
        let layer_input = net.apply_range(x.clone(), &mut probe.mode(), 0..layer)?;
        let (_, base) = probe.eval(layer_input.clone(), layer)?;
        let (nw, nb) = (grads.params[p].len(), grads.params[p + 1].len());
        let total = nw + nb;
        let mut check = LayerCheck {
            layer: Some(layer),
            kind: net.layers()[layer].kind(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        };
        let candidates = index::sample(&mut rng, total, total.min(cfg.samples * 10));
        for i in candidates {
            if check.checked == cfg.samples {
                break;
            }
            let (slot, j) = if i < nw { (p, i) } else { (p + 1, i - nw) };
            let w0 = probe.net.params()[slot].data()[j];
            let mut at = |v: f64| -> Result<(f64, u64)> {
                probe.net.params_mut()[slot].data_mut()[j] = v;
                let (l, pat) = probe.eval(layer_input.clone(), layer)?;
                Ok((l + l1_base + cfg.rho * (v.abs() - w0.abs()), pat))
            };
            let (lp, pp) = at(w0 + eps)?;
            let (lm, pm) = at(w0 - eps)?;
            probe.net.params_mut()[slot].data_mut()[j] = w0;
            if pp != base || pm != base {
                check.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            check.max_rel_err = check.max_rel_err.max(relative_error(grads.params[slot].data()[j], fd));
            check.checked += 1;
        }
        checks.push(check);
        p += 2;
    }
    Ok(GradCheckReport { checks, tolerance: cfg.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Conv3x3, Dropout, Linear, MaxPool};
    use crate::rng::seeded;
    use rand::Rng as _;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn linear_net() -> Network<f64> {
        let mut net = Network::new(
            &[12],
            vec![
                Layer::Linear(Linear::zeros(12, 9)),
                Layer::Linear(Linear::zeros(9, 4)),
                Layer::Softmax,
            ],
        )
        .unwrap();
        net.init_he(&mut seeded(3));
        net
    }

    fn conv_net() -> Network<f64> {
        let mut net = Network::new(
            &[2, 10, 12],
            vec![
                Layer::Conv3x3(Conv3x3::zeros(2, 4)),
                Layer::Relu,
                Layer::MaxPool(MaxPool { time: 2, freq: 2 }),
                Layer::Conv3x3(Conv3x3::zeros(4, 5)),
                Layer::Relu,
                Layer::Flatten,
                Layer::Linear(Linear::zeros(5 * 2 * 3, 6)),
                Layer::Relu,
                Layer::Dropout(Dropout { keep: 0.5 }),
                Layer::Linear(Linear::zeros(6, 3)),
                Layer::Softmax,
            ],
        )
        .unwrap();
        net.init_he(&mut seeded(5));
        net
    }

    #[test]
    fn linear_chain_is_tight() {
        let cfg = GradCheckConfig { samples: 200, ..Default::default() };
        let r = grad_check(&linear_net(), &input(&[3, 12], 1), &[0, 3, 1], &cfg).unwrap();
        assert!(r.max_rel_err() < 1e-6, "{r}");
    }

    #[test]
    fn conv_pool_relu_dropout_chain() {
        let cfg = GradCheckConfig { dropout_seed: Some(11), ..Default::default() };
        let r = grad_check(&conv_net(), &input(&[2, 2, 10, 12], 2), &[2, 0], &cfg).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks.iter().all(|c| c.checked > 0));
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let cfg = GradCheckConfig { corrupt: Some(1.01), ..Default::default() };
        let r = grad_check(&linear_net(), &input(&[3, 12], 1), &[0, 3, 1], &cfg).unwrap();
        assert!(r.max_rel_err() > 1e-3, "{r}");
        assert!(!r.passed());
    }
}
