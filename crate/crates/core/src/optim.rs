//! SGD with momentum and weight decay, and the step learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// One zeroed momentum buffer per parameter tensor of the given length.
    pub fn new(sizes: &[usize], lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be non-negative"));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            buffers: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }
}

/// `buf <- momentum * buf + grad + wd * param; param <- param - lr * buf`
pub fn sgd_step(state: &mut OptimizerState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != state.buffers.len() || grads.len() != state.buffers.len() {
        return Err(Error::ShapeMismatch {
            what: "parameter tensor count",
            expected: (state.buffers.len(), 1),
            actual: (params.len(), grads.len()),
        });
    }
    for ((p, g), b) in params.iter().zip(grads).zip(&state.buffers) {
        if p.len() != b.len() || g.len() != b.len() {
            return Err(Error::ShapeMismatch {
                what: "parameter tensor",
                expected: (b.len(), b.len()),
                actual: (p.len(), g.len()),
            });
        }
    }
    let (lr, mu, wd) = (state.lr, state.momentum, state.weight_decay);
    for ((p, g), b) in params.iter_mut().zip(grads).zip(state.buffers.iter_mut()) {
        for ((pv, gv), bv) in p.iter_mut().zip(g.iter()).zip(b.iter_mut()) {
            *bv = mu * *bv + gv + wd * *pv;
            *pv -= lr * *bv;
        }
    }
    Ok(())
}

/// Step schedule: the learning rate is divided by `decay_factor` at each
/// milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub total_epochs: usize,
    pub lr_initial: f64,
    /// 0-based epoch indices at which the rate drops.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 30,
            lr_initial: 0.1,
            milestones: vec![16, 24, 28],
            decay_factor: 10.0,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0) {
            return Err(Error::InvalidConfig("initial learning rate must be positive"));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::InvalidConfig("decay factor must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("milestones must be strictly increasing"));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_epochs) {
            return Err(Error::InvalidConfig("milestones must precede the last epoch"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "momentum must lie in [0, 1) and weight decay be >= 0",
            ));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        let mut lr = self.lr_initial;
        for _ in 0..drops {
            lr /= self.decay_factor;
        }
        lr
    }
}
