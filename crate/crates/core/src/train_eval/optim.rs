//! SGD with momentum and L2 weight decay.

use ndarray::ArrayD;

use crate::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

/// One update on a flat slice. Elements are independent, so splitting a tensor into
/// chunks and updating each gives the same result.
///
/// `g = grad + wd·p`, `v = μ·v + g`, then `p -= lr·(g + μ·v)` (Nesterov) or `p -= lr·v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    nesterov: bool,
) {
    for ((p, &grad), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = grad + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= if nesterov { lr * (g + momentum * *v) } else { lr * *v };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: Vec<ArrayD<f64>>,
}

impl OptimState {
    /// Zero velocity buffers shaped like `params`.
    pub fn new(params: &[ArrayD<f64>], momentum: f64, weight_decay: f64, nesterov: bool) -> Self {
        Self {
            momentum,
            weight_decay,
            nesterov,
            velocity: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn velocity(&self) -> &[ArrayD<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [ArrayD<f64>], grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, {} gradients, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {:?}, gradient {:?}, velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g.as_standard_layout();
            sgd_step(
                p.as_slice_mut().expect("parameters are contiguous"),
                g.as_slice().expect("standard layout"),
                v.as_slice_mut().expect("velocity is contiguous"),
                lr,
                self.momentum,
                self.weight_decay,
                self.nesterov,
            );
        }
        Ok(())
    }
}
