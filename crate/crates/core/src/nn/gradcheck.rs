//! Central finite-difference checks of the reverse-mode gradients.

use std::fmt;
use std::rc::Rc;

use ndarray::{Array2, Array3, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BlockVars, BnVars, LayerVars, Mode, ResidualVars, RunningStats, StructuralInput};
use super::model::{random_array, Model, ModelConfig, RunMode};
use super::ops;
use super::tape::{Tape, Var};
use crate::graph::{GraphSpec, SpatialAdjacency, DEFAULT_ALPHA, DEFAULT_MAX_HOP};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (tolerance {:.0e})", self.name, self.tolerance)?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<24} {:>6}  max abs {:.3e}  max rel {:.3e}",
                t.name, t.elements, t.max_abs_error, t.max_rel_error
            )?;
        }
        Ok(())
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central differences
/// for every element of every leaf.
pub fn check_gradients<F>(name: &str, leaves: &[(String, ArrayD<f64>)], tolerance: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[ArrayD<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.parameter(v.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|(_, v)| tape.parameter(v.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::ShapeMismatch(format!("{name}: checked function must return a scalar")));
    }
    let grads = tape.backward(out);

    let mut values: Vec<ArrayD<f64>> = leaves.iter().map(|(_, v)| v.clone()).collect();
    let mut tensors = Vec::with_capacity(leaves.len());
    for (li, (leaf_name, leaf)) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[li], leaf);
        let mut report = TensorReport { name: leaf_name.clone(), elements: leaf.len(), max_abs_error: 0.0, max_rel_error: 0.0 };
        for i in 0..leaf.len() {
            let original = leaf.as_slice().expect("contiguous")[i];
            values[li].as_slice_mut().expect("contiguous")[i] = original + FD_STEP;
            let plus = eval(&values)?;
            values[li].as_slice_mut().expect("contiguous")[i] = original - FD_STEP;
            let minus = eval(&values)?;
            values[li].as_slice_mut().expect("contiguous")[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.as_slice().expect("contiguous")[i];
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        }
        tensors.push(report);
    }
    Ok(GradCheckReport { name: name.to_string(), tolerance, tensors })
}

/// The pieces covered by [`run_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    SpatialGcn,
    StructuralGcn,
    SpstGcn,
    TemporalConv,
    Block,
    Model,
    Loss,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 7] = [
        CheckTarget::SpatialGcn,
        CheckTarget::StructuralGcn,
        CheckTarget::SpstGcn,
        CheckTarget::TemporalConv,
        CheckTarget::Block,
        CheckTarget::Model,
        CheckTarget::Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckTarget::SpatialGcn => "spatial_gcn",
            CheckTarget::StructuralGcn => "structural_gcn",
            CheckTarget::SpstGcn => "spst_gcn",
            CheckTarget::TemporalConv => "temporal_conv",
            CheckTarget::Block => "gcn_block",
            CheckTarget::Model => "model",
            CheckTarget::Loss => "loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn tolerance(self) -> f64 {
        match self {
            CheckTarget::Model => 1e-5,
            CheckTarget::Loss => 1e-8,
            _ => 1e-6,
        }
    }
}

/// Four joints: a center with three leaves.
pub fn tiny_graph() -> GraphSpec {
    GraphSpec::new(4, vec![(0, 1), (1, 2), (1, 3)], 1, vec![0, 2, 3]).expect("valid tree")
}

/// A structural matrix with random distances in `[0.5, 2)` between the edge nodes.
pub fn random_structural<R: Rng>(rng: &mut R, graph: &GraphSpec) -> Array2<f64> {
    let v = graph.joint_count();
    let mut out = Array2::eye(v);
    let edge = graph.edge_nodes();
    for (i, &a) in edge.iter().enumerate() {
        for &b in &edge[i + 1..] {
            let d: f64 = rng.gen_range(0.5..2.0);
            out[[a, b]] = -1.0 / d;
            out[[b, a]] = -1.0 / d;
        }
    }
    out
}

fn structural_input<R: Rng>(rng: &mut R, graph: &GraphSpec, samples: usize, bodies: usize) -> StructuralInput {
    let v = graph.joint_count();
    let mut adj = Array3::zeros((samples, v, v));
    for s in 0..samples {
        adj.index_axis_mut(ndarray::Axis(0), s).assign(&random_structural(rng, graph));
    }
    StructuralInput { adjacency: Rc::new(adj), bodies }
}

fn named(pairs: Vec<(&str, ArrayD<f64>)>) -> Vec<(String, ArrayD<f64>)> {
    pairs.into_iter().map(|(n, v)| (n.to_string(), v)).collect()
}

/// Runs the check for `target` on a randomly initialized tiny instance.
pub fn run_check(target: CheckTarget, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = tiny_graph();
    let a_hat = SpatialAdjacency::build(&graph, DEFAULT_MAX_HOP, DEFAULT_ALPHA).stacked().into_dyn();
    let k = a_hat.shape()[0];
    let (c_in, c_out, t, v) = (2, 3, 4, graph.joint_count());
    let name = target.name();
    let tol = target.tolerance();
    let x = random_array(&mut rng, &[1, c_in, t, v]);
    let structural = structural_input(&mut rng, &graph, 1, 1);

    match target {
        CheckTarget::SpatialGcn => {
            let r = random_array(&mut rng, &[1, c_out, t, v]);
            let leaves = named(vec![
                ("x", x),
                ("w", random_array(&mut rng, &[k, c_out, c_in])),
                ("b", random_array(&mut rng, &[k, v, v])),
            ]);
            check_gradients(name, &leaves, tol, |tape, p| {
                let y = layers::spatial_gcn(tape, p[0], &a_hat, p[1], p[2])?;
                ops::weighted_sum(tape, y, r.clone())
            })
        }
        CheckTarget::StructuralGcn => {
            let r = random_array(&mut rng, &[1, c_out, t, v]);
            let leaves = named(vec![("x", x), ("m", random_array(&mut rng, &[c_out, c_in]))]);
            check_gradients(name, &leaves, tol, |tape, p| {
                let y = layers::structural_gcn(tape, p[0], p[1], &structural)?;
                ops::weighted_sum(tape, y, r.clone())
            })
        }
        CheckTarget::SpstGcn => {
            let r = random_array(&mut rng, &[1, c_out, t, v]);
            let leaves = named(vec![
                ("x", x),
                ("w", random_array(&mut rng, &[k, c_out, c_in])),
                ("b", random_array(&mut rng, &[k, v, v])),
                ("m", random_array(&mut rng, &[c_out, c_in])),
            ]);
            check_gradients(name, &leaves, tol, |tape, p| {
                let vars = LayerVars { w: p[1], b: p[2], m: Some(p[3]) };
                let y = layers::spst_gcn(tape, p[0], &a_hat, &vars, Some(&structural))?;
                ops::weighted_sum(tape, y, r.clone())
            })
        }
        CheckTarget::TemporalConv => {
            let t_out = (t - 1) / 2 + 1;
            let r = random_array(&mut rng, &[1, c_out, t_out, v]);
            let leaves = named(vec![
                ("x", x),
                ("w", random_array(&mut rng, &[c_out, c_in, 3])),
                ("bias", random_array(&mut rng, &[c_out])),
            ]);
            check_gradients(name, &leaves, tol, |tape, p| {
                let y = ops::temporal_conv(tape, p[0], p[1], Some(p[2]), 2)?;
                ops::weighted_sum(tape, y, r.clone())
            })
        }
        CheckTarget::Block => {
            let t_out = (t - 1) / 2 + 1;
            let r = random_array(&mut rng, &[1, c_out, t_out, v]);
            let leaves = named(vec![
                ("x", x),
                ("gcn.w", random_array(&mut rng, &[k, c_out, c_in])),
                ("gcn.b", random_array(&mut rng, &[k, v, v])),
                ("gcn.m", random_array(&mut rng, &[c_out, c_in])),
                ("bn.gamma", random_array(&mut rng, &[c_out])),
                ("bn.beta", random_array(&mut rng, &[c_out])),
                ("tcn.w", random_array(&mut rng, &[c_out, c_out, 3])),
                ("tcn.bias", random_array(&mut rng, &[c_out])),
                ("res.w", random_array(&mut rng, &[c_out, c_in, 1])),
                ("res.bn.gamma", random_array(&mut rng, &[c_out])),
                ("res.bn.beta", random_array(&mut rng, &[c_out])),
            ]);
            let running = RunningStats::new(c_out);
            check_gradients(name, &leaves, tol, |tape, p| {
                let vars = BlockVars {
                    gcn: LayerVars { w: p[1], b: p[2], m: Some(p[3]) },
                    bn: BnVars { gamma: p[4], beta: p[5], running: &running },
                    tcn_w: p[6],
                    tcn_b: p[7],
                    stride: 2,
                    residual: ResidualVars::Projection {
                        w: p[8],
                        bn: BnVars { gamma: p[9], beta: p[10], running: &running },
                    },
                };
                let mut stats = Vec::new();
                let y = layers::gcn_block(tape, p[0], &a_hat, &vars, Some(&structural), Mode::Train, &mut stats)?;
                ops::weighted_sum(tape, y, r.clone())
            })
        }
        CheckTarget::Model => {
            let config = ModelConfig {
                plan: "3,4/2".parse()?,
                kernel: 3,
                classes: 3,
                ..ModelConfig::default()
            };
            let (samples, bodies) = (2, 2);
            let model = Model::new(config, graph.clone(), seed)?;
            let structural = structural_input(&mut rng, &graph, samples, bodies);
            let labels: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..3)).collect();
            let mut leaves = vec![("x".to_string(), random_array(&mut rng, &[samples * bodies, 6, t, v]))];
            // Fresh parameters are partly exact zeros or ones; randomize them so every
            // path carries a generic gradient.
            for (n, p) in model.params().names().iter().zip(model.params().values()) {
                leaves.push((n.clone(), random_array(&mut rng, p.shape())));
            }
            check_gradients(name, &leaves, tol, |tape, p| {
                let pass = model.forward(
                    tape,
                    &p[1..],
                    p[0],
                    Some(&structural),
                    bodies,
                    RunMode::Train { dropout_seed: seed },
                )?;
                ops::cross_entropy(tape, pass.logits, &labels)
            })
        }
        CheckTarget::Loss => {
            let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..5)).collect();
            let leaves = named(vec![("logits", random_array(&mut rng, &[2, 5]))]);
            check_gradients(name, &leaves, tol, |tape, p| ops::cross_entropy(tape, p[0], &labels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_target_passes() {
        for seed in 0..3 {
            for target in CheckTarget::ALL {
                let report = run_check(target, seed).unwrap();
                assert!(report.passed(), "seed {seed}\n{report}");
            }
        }
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-5).abs() < 1e-15);
    }
}
