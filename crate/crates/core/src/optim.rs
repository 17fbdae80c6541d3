//! Adam, RMSProp, weight clipping and the stepwise learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64 },
    RmsProp { rho: f64 },
}

/// Per-parameter moment accumulators. For RMSProp only `second` is used.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub eps: f64,
    pub step_count: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, shapes: &[(usize, usize)]) -> Result<Self> {
        match kind {
            OptimizerKind::Adam { beta1, beta2 } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::Config(format!("Adam betas must lie in [0, 1), got ({beta1}, {beta2})")));
                }
            }
            OptimizerKind::RmsProp { rho } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::Config(format!("RMSProp rho must lie in [0, 1), got {rho}")));
                }
            }
        }
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect::<Vec<_>>();
        Ok(Self { kind, eps: DEFAULT_EPS, step_count: 0, first: zeros(), second: zeros() })
    }

    pub fn adam(beta1: f64, beta2: f64, shapes: &[(usize, usize)]) -> Result<Self> {
        Self::new(OptimizerKind::Adam { beta1, beta2 }, shapes)
    }

    pub fn rmsprop(rho: f64, shapes: &[(usize, usize)]) -> Result<Self> {
        Self::new(OptimizerKind::RmsProp { rho }, shapes)
    }

    fn check(&self, params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.second.len() || grads.len() != self.second.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.second.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.second) {
            if p.shape() != s.shape() || g.shape() != s.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?} / gradient {:?} vs state {:?}",
                    p.shape(),
                    g.shape(),
                    s.shape()
                )));
            }
        }
        Ok(())
    }

    /// One descent step `θ ← θ − lr · update(g)`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        self.check(params, grads)?;
        self.step_count += 1;
        let eps = self.eps;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2 } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, g) in grads.iter().enumerate() {
                    let p = params[k].as_mut_slice();
                    let m = self.first[k].as_mut_slice();
                    let v = self.second[k].as_mut_slice();
                    for i in 0..p.len() {
                        let gi = g.as_slice()[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { rho } => {
                for (k, g) in grads.iter().enumerate() {
                    let p = params[k].as_mut_slice();
                    let v = self.second[k].as_mut_slice();
                    for i in 0..p.len() {
                        let gi = g.as_slice()[i];
                        v[i] = rho * v[i] + (1.0 - rho) * gi * gi;
                        p[i] -= lr * gi / (v[i].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut OptimizerState, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    if !matches!(state.kind, OptimizerKind::Adam { .. }) {
        return Err(Error::Config("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads, lr)
}

pub fn rmsprop_step(state: &mut OptimizerState, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    if !matches!(state.kind, OptimizerKind::RmsProp { .. }) {
        return Err(Error::Config("rmsprop_step on a non-RMSProp state".into()));
    }
    state.step(params, grads, lr)
}

/// Clamps every entry to `[−c, c]`.
pub fn clip_weights(params: &mut [&mut Matrix], c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("clip bound must be positive, got {c}")));
    }
    for p in params.iter_mut() {
        p.as_mut_slice().iter_mut().for_each(|x| *x = x.clamp(-c, c));
    }
    Ok(())
}

/// `initial_lr · decay_factor^⌊iter / (decay_every_epochs · epoch_size_iters)⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: u64,
    pub epoch_size_iters: u64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every_epochs: u64, epoch_size_iters: u64) -> Result<Self> {
        if !(initial_lr > 0.0) || !(decay_factor > 0.0) {
            return Err(Error::Config(format!("learning rate {initial_lr} and decay {decay_factor} must be positive")));
        }
        if decay_every_epochs == 0 || epoch_size_iters == 0 {
            return Err(Error::Config("decay period must be at least one iteration".into()));
        }
        Ok(Self { initial_lr, decay_factor, decay_every_epochs, epoch_size_iters })
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(lr, 1.0, 1, 1)
    }
}

pub fn lr_at(schedule: &LrSchedule, iter: u64) -> f64 {
    let k = iter / (schedule.decay_every_epochs * schedule.epoch_size_iters);
    schedule.initial_lr * schedule.decay_factor.powi(k.min(i32::MAX as u64) as i32)
}
