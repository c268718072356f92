//! The SpSt-GCN layer and the block built around it.

use std::rc::Rc;

use ndarray::{Array1, Array3, ArrayD};

use super::ops::{self, BatchStats};
use super::tape::{Tape, Var};
use crate::Result;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-sample structural matrices for a batch: `(N, V, V)` plus the body slots per sample.
#[derive(Debug, Clone)]
pub struct StructuralInput {
    pub adjacency: Rc<Array3<f64>>,
    pub bodies: usize,
}

/// Tape handles for one SpSt-GCN layer: `w` `(K, C_out, C_in)`, `b` `(K, V, V)` and the
/// optional structural weight `m` `(C_out, C_in)`.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w: Var,
    pub b: Var,
    pub m: Option<Var>,
}

/// Running statistics of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: Array1::zeros(channels), var: Array1::ones(channels) }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        self.mean = &self.mean * (1.0 - BN_MOMENTUM) + &batch.mean * BN_MOMENTUM;
        self.var = &self.var * (1.0 - BN_MOMENTUM) + &batch.var * BN_MOMENTUM;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BnVars<'a> {
    pub gamma: Var,
    pub beta: Var,
    pub running: &'a RunningStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub enum ResidualVars<'a> {
    None,
    Identity,
    Projection { w: Var, bn: BnVars<'a> },
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars<'a> {
    pub gcn: LayerVars,
    pub bn: BnVars<'a>,
    pub tcn_w: Var,
    pub tcn_b: Var,
    pub stride: usize,
    pub residual: ResidualVars<'a>,
}

/// `Σ_k W_k · x · (Â_k + B_k)` with the normalized partitions `a_hat` `(K, V, V)`.
pub fn spatial_gcn(tape: &Tape, x: Var, a_hat: &ArrayD<f64>, w: Var, b: Var) -> Result<Var> {
    let g = ops::add_const(tape, b, a_hat)?;
    ops::graph_conv(tape, x, w, g)
}

/// `M · x · As` with one structural matrix per sample.
pub fn structural_gcn(tape: &Tape, x: Var, m: Var, structural: &StructuralInput) -> Result<Var> {
    ops::structural_conv(tape, x, m, Rc::clone(&structural.adjacency), structural.bodies)
}

/// Sum of the spatial and structural branches. The structural branch runs only when
/// the layer has an `m` weight.
pub fn spst_gcn(
    tape: &Tape,
    x: Var,
    a_hat: &ArrayD<f64>,
    vars: &LayerVars,
    structural: Option<&StructuralInput>,
) -> Result<Var> {
    let spatial = spatial_gcn(tape, x, a_hat, vars.w, vars.b)?;
    match (vars.m, structural) {
        (None, _) => Ok(spatial),
        (Some(m), Some(s)) => {
            let st = structural_gcn(tape, x, m, s)?;
            ops::add(tape, spatial, st)
        }
        (Some(_), None) => Err(crate::Error::ShapeMismatch(
            "structural branch enabled but no structural adjacency supplied".into(),
        )),
    }
}

pub fn batch_norm(tape: &Tape, x: Var, vars: &BnVars, mode: Mode, stats: &mut Vec<BatchStats>) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (y, s) = ops::batch_norm_train(tape, x, vars.gamma, vars.beta, BN_EPSILON)?;
            stats.push(s);
            Ok(y)
        }
        Mode::Eval => ops::batch_norm_eval(
            tape,
            x,
            vars.gamma,
            vars.beta,
            &vars.running.mean,
            &vars.running.var,
            BN_EPSILON,
        ),
    }
}

/// Layer, normalization, ReLU, temporal convolution, then the residual sum.
///
/// Batch statistics of every normalization run in training mode are appended to
/// `stats` in evaluation order.
pub fn gcn_block(
    tape: &Tape,
    x: Var,
    a_hat: &ArrayD<f64>,
    vars: &BlockVars,
    structural: Option<&StructuralInput>,
    mode: Mode,
    stats: &mut Vec<BatchStats>,
) -> Result<Var> {
    let h = spst_gcn(tape, x, a_hat, &vars.gcn, structural)?;
    let h = batch_norm(tape, h, &vars.bn, mode, stats)?;
    let h = ops::relu(tape, h);
    let h = ops::temporal_conv(tape, h, vars.tcn_w, Some(vars.tcn_b), vars.stride)?;
    match vars.residual {
        ResidualVars::None => Ok(h),
        ResidualVars::Identity => ops::add(tape, h, x),
        ResidualVars::Projection { w, bn } => {
            let r = ops::temporal_conv(tape, x, w, None, vars.stride)?;
            let r = batch_norm(tape, r, &bn, mode, stats)?;
            ops::add(tape, h, r)
        }
    }
}
