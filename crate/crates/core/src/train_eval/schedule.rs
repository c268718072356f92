//! Constant-then-cosine learning-rate schedule.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    /// Epochs at the base rate before decay starts.
    pub warm_epochs: usize,
    /// Epoch at which the rate reaches zero.
    pub total_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { base_lr: 0.1, warm_epochs: 10, total_epochs: 50 }
    }
}

impl Schedule {
    /// Rate for a 1-based `epoch`: `base_lr` up to `warm_epochs`, then half-cosine decay
    /// reaching exactly zero at `total_epochs` and staying there.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch <= self.warm_epochs || self.total_epochs <= self.warm_epochs {
            return self.base_lr;
        }
        if epoch >= self.total_epochs {
            return 0.0;
        }
        let span = (self.total_epochs - self.warm_epochs) as f64;
        let progress = (epoch - self.warm_epochs) as f64 / span;
        0.5 * self.base_lr * (1.0 + (PI * progress).cos())
    }
}

/// The default schedule: 0.1 for ten epochs, cosine to zero at epoch 50.
pub fn cosine_lr(epoch: usize) -> f64 {
    Schedule::default().lr(epoch)
}
