use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Default classifier learning rate.
pub const LEARNING_RATE: f64 = 0.01;
/// Default momentum.
pub const MOMENTUM: f64 = 0.9;

/// Momentum buffers and learning-rate schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_rho: f64,
    pub seed: u64,
    pub schedule: Plateau,
}

impl<T: Scalar> TrainState<T> {
    /// Zero velocity matching `params`.
    pub fn new(params: &[&Tensor<T>], learning_rate: f64, seed: u64) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            learning_rate,
            momentum: MOMENTUM,
            l1_rho: super::loss::L1_RHO,
            seed,
            schedule: Plateau::default(),
        }
    }

    /// `v ← μv − ηg; w ← w + v`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::Config(format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        let (mu, eta) = (T::of(self.momentum), T::of(self.learning_rate));
        for ((w, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if w.shape() != g.shape() || w.shape() != v.shape() {
                return Err(Error::Config(format!("shape mismatch {:?} vs {:?}", w.shape(), g.shape())));
            }
            for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi - eta * gi;
                *wi = *wi + *vi;
            }
        }
        Ok(())
    }

    /// Feed an epoch's validation loss; halves the learning rate on plateau.
    pub fn end_epoch(&mut self, val_loss: f64) -> bool {
        let cut = self.schedule.observe(val_loss);
        if cut {
            self.learning_rate *= self.schedule.factor;
        }
        cut
    }
}

/// Reduce-on-plateau: after `patience` epochs without improvement the rate
/// is multiplied by `factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    stale: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Self::new(3, 0.5)
    }
}

impl Plateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return true;
        }
        false
    }
}
