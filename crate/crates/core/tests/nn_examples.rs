mod common;

use std::rc::Rc;

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use spst_core::graph::ntu_graph;
use spst_core::nn::layers::{self, BlockVars, BnVars, LayerVars, Mode, ResidualVars, RunningStats};
use spst_core::nn::{
    batch_input, load_checkpoint, ops, save_checkpoint, Model, ModelConfig, RunMode, StructuralInput, Tape,
};
use spst_core::preprocess::joint_branch;
use spst_core::skeleton_io::{generate_synthetic_dataset, SyntheticSpec};
use spst_core::struct_adj::{sample_adjacency, DtwConfig, StructuralAdjacency};
use spst_core::{Error, FeatureTensor};

use common::*;

fn eye3(k: usize, v: usize) -> ArrayD<f64> {
    let mut a = Array3::zeros((k, v, v));
    for kk in 0..k {
        for i in 0..v {
            a[[kk, i, i]] = 1.0;
        }
    }
    a.into_dyn()
}

fn eye2(c: usize) -> ArrayD<f64> {
    Array2::<f64>::eye(c).into_dyn()
}

fn bitwise_eq(a: &ArrayD<f64>, b: &ArrayD<f64>) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn spatial_identity_configuration_returns_input() {
    let x = uniform(&mut rng(1), &[2, 3, 4, 5]);
    let tape = Tape::new();
    let xv = tape.input(x.clone());
    let w = tape.parameter(eye2(3).into_shape_with_order(IxDyn(&[1, 3, 3])).unwrap());
    let b = tape.parameter(ArrayD::zeros(IxDyn(&[1, 5, 5])));
    let y = layers::spatial_gcn(&tape, xv, &eye3(1, 5), w, b).unwrap();
    assert!(max_abs_diff(&tape.value(y), &x) <= 1e-15);
}

#[test]
fn zero_learned_matrix_matches_plain_graph_conv() {
    let mut r = rng(2);
    let x = uniform(&mut r, &[2, 2, 3, 4]);
    let w = uniform(&mut r, &[3, 4, 2]);
    let a_hat = uniform(&mut r, &[3, 4, 4]);
    let tape = Tape::new();
    let xv = tape.input(x);
    let wv = tape.parameter(w);
    let fresh = layers::spatial_gcn(&tape, xv, &a_hat, wv, tape.parameter(ArrayD::zeros(IxDyn(&[3, 4, 4])))).unwrap();
    let plain = ops::graph_conv(&tape, xv, wv, tape.input(a_hat)).unwrap();
    assert!(bitwise_eq(&tape.value(fresh), &tape.value(plain)));
}

#[test]
fn fresh_model_starts_with_zero_learned_adjacency() {
    let model = Model::new(ModelConfig { plan: "8,8".parse().unwrap(), ..ModelConfig::default() }, ntu_graph(), 3).unwrap();
    for name in ["init.gcn.b", "block1.gcn.b"] {
        assert!(model.params().get(name).unwrap().iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn structural_identity_configuration_returns_input() {
    let x = uniform(&mut rng(3), &[2, 3, 4, 5]);
    let tape = Tape::new();
    let input = StructuralInput { adjacency: Rc::new(eye3(2, 5).into_dimensionality().unwrap()), bodies: 1 };
    let y = layers::structural_gcn(&tape, tape.input(x.clone()), tape.parameter(eye2(3)), &input).unwrap();
    assert!(max_abs_diff(&tape.value(y), &x) <= 1e-15);
}

#[test]
fn constant_features_scale_by_structural_row_sum() {
    let graph = ntu_graph();
    let v = graph.joint_count();
    let edge = graph.edge_nodes();
    let mut adj = Array2::<f64>::eye(v);
    let d = [1.5, 2.0, 4.0, 0.5, 3.0, 2.5, 1.0, 6.0, 0.8, 1.2];
    let mut pair = 0;
    for (i, &a) in edge.iter().enumerate() {
        for &b in &edge[i + 1..] {
            adj[[a, b]] = -1.0 / d[pair];
            adj[[b, a]] = -1.0 / d[pair];
            pair += 1;
        }
    }
    let x = ArrayD::from_elem(IxDyn(&[1, 2, 3, v]), 0.7);
    let tape = Tape::new();
    let input = StructuralInput { adjacency: Rc::new(adj.clone().insert_axis(Axis(0))), bodies: 1 };
    let y = layers::structural_gcn(&tape, tape.input(x), tape.parameter(eye2(2)), &input).unwrap();
    let y = tape.value(y);
    for &a in edge {
        let row_sum = 1.0 - edge.iter().filter(|&&b| b != a).map(|&b| -adj[[a, b]]).sum::<f64>();
        assert!((y[[0, 1, 2, a]] - 0.7 * row_sum).abs() <= 1e-12);
    }
    assert!((y[[0, 0, 0, graph.center_joint()]] - 0.7).abs() <= 1e-15);
}

#[test]
fn spst_layer_branch_cases() {
    let mut r = rng(4);
    let x = uniform(&mut r, &[2, 3, 4, 5]);
    let a_hat = uniform(&mut r, &[2, 5, 5]);
    let adj = Rc::new(uniform(&mut r, &[2, 5, 5]).into_dimensionality().unwrap());
    let input = StructuralInput { adjacency: adj, bodies: 1 };
    let tape = Tape::new();
    let xv = tape.input(x.clone());
    let w = tape.parameter(uniform(&mut r, &[2, 3, 3]));
    let b = tape.parameter(uniform(&mut r, &[2, 5, 5]));
    let spatial = layers::spatial_gcn(&tape, xv, &a_hat, w, b).unwrap();

    let disabled = layers::spst_gcn(&tape, xv, &a_hat, &LayerVars { w, b, m: None }, Some(&input)).unwrap();
    assert!(bitwise_eq(&tape.value(disabled), &tape.value(spatial)));

    let zero_m = tape.parameter(ArrayD::zeros(IxDyn(&[3, 3])));
    let with_zero = layers::spst_gcn(&tape, xv, &a_hat, &LayerVars { w, b, m: Some(zero_m) }, Some(&input)).unwrap();
    assert!(max_abs_diff(&tape.value(with_zero), &tape.value(spatial)) == 0.0);

    let ident = StructuralInput { adjacency: Rc::new(eye3(2, 5).into_dimensionality().unwrap()), bodies: 1 };
    let vars = LayerVars {
        w: tape.parameter(eye2(3).into_shape_with_order(IxDyn(&[1, 3, 3])).unwrap()),
        b: tape.parameter(ArrayD::zeros(IxDyn(&[1, 5, 5]))),
        m: Some(tape.parameter(eye2(3))),
    };
    let doubled = layers::spst_gcn(&tape, xv, &eye3(1, 5), &vars, Some(&ident)).unwrap();
    assert!(max_abs_diff(&tape.value(doubled), &(&x * 2.0)) <= 1e-15);

    let missing = layers::spst_gcn(&tape, xv, &a_hat, &LayerVars { w, b, m: Some(zero_m) }, None);
    assert!(matches!(missing, Err(Error::ShapeMismatch(_))));
}

#[test]
fn temporal_identity_and_averaging_kernels() {
    let x = uniform(&mut rng(5), &[2, 2, 6, 3]);
    let tape = Tape::new();
    let mut w = ArrayD::zeros(IxDyn(&[2, 2, 3]));
    w[[0, 0, 1]] = 1.0;
    w[[1, 1, 1]] = 1.0;
    let y = ops::temporal_conv(&tape, tape.input(x.clone()), tape.parameter(w), None, 1).unwrap();
    assert!(bitwise_eq(&tape.value(y), &x));

    let constant = ArrayD::from_elem(IxDyn(&[1, 1, 7, 2]), 2.5);
    let avg = ArrayD::from_elem(IxDyn(&[1, 1, 5]), 0.2);
    let y = ops::temporal_conv(&tape, tape.input(constant), tape.parameter(avg), None, 1).unwrap();
    let y = tape.value(y);
    for t in 2..5 {
        for v in 0..2 {
            assert!((y[[0, 0, t, v]] - 2.5).abs() <= 1e-15);
        }
    }
}

fn zero_block<'a>(tape: &Tape, c_in: usize, c_out: usize, k: usize, v: usize, stride: usize, running: &'a RunningStats, residual: ResidualVars<'a>) -> BlockVars<'a> {
    let zeros = |shape: &[usize]| tape.parameter(ArrayD::zeros(IxDyn(shape)));
    BlockVars {
        gcn: LayerVars { w: zeros(&[k, c_out, c_in]), b: zeros(&[k, v, v]), m: Some(zeros(&[c_out, c_in])) },
        bn: BnVars { gamma: tape.parameter(ArrayD::ones(IxDyn(&[c_out]))), beta: zeros(&[c_out]), running },
        tcn_w: zeros(&[c_out, c_out, 3]),
        tcn_b: zeros(&[c_out]),
        stride,
        residual,
    }
}

#[test]
fn zeroed_block_passes_the_residual_through() {
    let mut r = rng(6);
    let (v, k) = (4, 2);
    let x = uniform(&mut r, &[2, 3, 6, v]);
    let a_hat = uniform(&mut r, &[k, v, v]);
    let input = StructuralInput { adjacency: Rc::new(uniform(&mut r, &[2, v, v]).into_dimensionality().unwrap()), bodies: 1 };
    let tape = Tape::new();
    let xv = tape.input(x.clone());

    let running = RunningStats::new(3);
    let vars = zero_block(&tape, 3, 3, k, v, 1, &running, ResidualVars::Identity);
    let y = layers::gcn_block(&tape, xv, &a_hat, &vars, Some(&input), Mode::Eval, &mut Vec::new()).unwrap();
    assert!(bitwise_eq(&tape.value(y), &x));

    let running5 = RunningStats::new(5);
    let proj_running = RunningStats { mean: Array1::from(vec![0.1, -0.2, 0.0, 0.3, 0.5]), var: Array1::from(vec![1.0, 2.0, 0.5, 1.5, 3.0]) };
    let pw = uniform(&mut r, &[5, 3, 1]);
    let gamma = uniform(&mut r, &[5]);
    let beta = uniform(&mut r, &[5]);
    let projection = ResidualVars::Projection {
        w: tape.parameter(pw.clone()),
        bn: BnVars { gamma: tape.parameter(gamma.clone()), beta: tape.parameter(beta.clone()), running: &proj_running },
    };
    let vars = zero_block(&tape, 3, 5, k, v, 2, &running5, projection);
    let y = layers::gcn_block(&tape, xv, &a_hat, &vars, Some(&input), Mode::Eval, &mut Vec::new()).unwrap();
    let projected = temporal_oracle(&x, &pw.into_dimensionality().unwrap(), None, 2);
    let expected = bn_eval_oracle(
        &projected,
        &gamma.into_dimensionality().unwrap(),
        &beta.into_dimensionality().unwrap(),
        &proj_running.mean,
        &proj_running.var,
        layers::BN_EPSILON,
    );
    assert_eq!(tape.value(y).shape(), &[2, 5, 3, v]);
    assert!(max_abs_diff(&tape.value(y), &expected.into_dyn()) <= 1e-12);
}

#[test]
fn train_mode_block_matches_oracle_with_batch_statistics() {
    let mut r = rng(7);
    let (v, k) = (4, 2);
    let x = uniform(&mut r, &[2, 2, 5, v]);
    let a_hat = uniform(&mut r, &[k, v, v]);
    let w = uniform(&mut r, &[k, 3, 2]);
    let tw = uniform(&mut r, &[3, 3, 3]);
    let tb = uniform(&mut r, &[3]);
    let gamma = uniform(&mut r, &[3]);
    let beta = uniform(&mut r, &[3]);
    let tape = Tape::new();
    let running = RunningStats::new(3);
    let vars = BlockVars {
        gcn: LayerVars { w: tape.parameter(w.clone()), b: tape.parameter(ArrayD::zeros(IxDyn(&[k, v, v]))), m: None },
        bn: BnVars { gamma: tape.parameter(gamma.clone()), beta: tape.parameter(beta.clone()), running: &running },
        tcn_w: tape.parameter(tw.clone()),
        tcn_b: tape.parameter(tb.clone()),
        stride: 1,
        residual: ResidualVars::None,
    };
    let mut stats = Vec::new();
    let y = layers::gcn_block(&tape, tape.input(x.clone()), &a_hat, &vars, None, Mode::Train, &mut stats).unwrap();
    let h = spatial_oracle(&x, &w.into_dimensionality().unwrap(), &a_hat.into_dimensionality().unwrap());
    let h = bn_train_oracle(&h, &gamma.into_dimensionality().unwrap(), &beta.into_dimensionality().unwrap(), layers::BN_EPSILON)
        .mapv(|v| v.max(0.0));
    let expected = temporal_oracle(&h.into_dyn(), &tw.into_dimensionality().unwrap(), Some(&tb.into_dimensionality().unwrap()), 1);
    assert_eq!(stats.len(), 1);
    assert!(max_abs_diff(&tape.value(y), &expected.into_dyn()) <= 1e-12);
}

struct Batch {
    samples: Vec<FeatureTensor>,
    structural: Vec<StructuralAdjacency>,
}

fn batch(n_per_class: usize, seed: u64) -> Batch {
    let graph = ntu_graph();
    let data = generate_synthetic_dataset(&SyntheticSpec { samples_per_class: n_per_class, ..SyntheticSpec::default() }, seed).unwrap();
    Batch {
        samples: data.tensors.iter().map(|x| joint_branch(x, graph.center_joint()).unwrap()).collect(),
        structural: data.tensors.iter().map(|x| sample_adjacency(x, &graph, &DtwConfig::default()).unwrap()).collect(),
    }
}

fn small_config() -> ModelConfig {
    ModelConfig { plan: "8,8/2,12/2".parse().unwrap(), kernel: 3, classes: 3, ..ModelConfig::default() }
}

#[test]
fn model_shapes_follow_the_stride_plan() {
    let b = batch(1, 8);
    let model = Model::new(small_config(), ntu_graph(), 1).unwrap();
    let refs: Vec<&FeatureTensor> = b.samples.iter().take(2).collect();
    let (input, bodies) = batch_input(&refs).unwrap();
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let st = StructuralInput {
        adjacency: Rc::new(spst_core::nn::batch_adjacency(&b.structural.iter().take(2).collect::<Vec<_>>()).unwrap()),
        bodies,
    };
    let pass = model.forward(&tape, &vars, tape.input(input), Some(&st), bodies, RunMode::Eval).unwrap();
    assert_eq!(tape.shape(pass.features), vec![2 * bodies, 12, 16, 25]);
    let logits = tape.value(pass.logits);
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn eval_predictions_are_deterministic() {
    let b = batch(1, 9);
    let model = Model::new(small_config(), ntu_graph(), 2).unwrap();
    let refs: Vec<&FeatureTensor> = b.samples.iter().collect();
    let adj: Vec<&StructuralAdjacency> = b.structural.iter().collect();
    assert!(bitwise_eq(&model.predict(&refs, &adj).unwrap(), &model.predict(&refs, &adj).unwrap()));
}

#[test]
fn permuting_body_slots_leaves_logits_unchanged() {
    let b = batch(1, 10);
    let model = Model::new(small_config(), ntu_graph(), 3).unwrap();
    let mut r = rng(10);
    let two_bodies: Vec<FeatureTensor> = b
        .samples
        .iter()
        .map(|s| {
            let mut d = s.data().clone();
            let other = uniform(&mut r, &[6, 64, 25]).into_dimensionality::<ndarray::Ix3>().unwrap();
            d.index_axis_mut(Axis(3), 1).assign(&other);
            FeatureTensor::new(d, s.semantics()).unwrap()
        })
        .collect();
    let swapped: Vec<FeatureTensor> = two_bodies
        .iter()
        .map(|s| {
            let mut d = s.data().clone();
            d.invert_axis(Axis(3));
            FeatureTensor::new(d, s.semantics()).unwrap()
        })
        .collect();
    let adj: Vec<&StructuralAdjacency> = b.structural.iter().collect();
    let a = model.predict(&two_bodies.iter().collect::<Vec<_>>(), &adj).unwrap();
    let s = model.predict(&swapped.iter().collect::<Vec<_>>(), &adj).unwrap();
    assert!(bitwise_eq(&a, &s));
}

#[test]
fn classifier_parameter_count() {
    let cfg = ModelConfig { plan: "32,64".parse().unwrap(), classes: 60, ..ModelConfig::default() };
    let model = Model::new(cfg, ntu_graph(), 0).unwrap();
    let fc = model.params().get("fc.w").unwrap().len() + model.params().get("fc.bias").unwrap().len();
    assert_eq!(fc, 64 * 60 + 60);
}

#[test]
fn uniform_logits_give_log_class_count() {
    for n in [2usize, 3, 60] {
        let tape = Tape::new();
        let logits = tape.input(ArrayD::from_elem(IxDyn(&[4, n]), 0.3));
        let loss = ops::cross_entropy(&tape, logits, &[0, 1, 0, 1]).unwrap();
        assert!((tape.scalar(loss) - (n as f64).ln()).abs() <= 1e-12);
    }
    let tape = Tape::new();
    let logits = tape.input(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![0.0, 800.0, 0.0]).unwrap());
    assert!(tape.scalar(ops::cross_entropy(&tape, logits, &[1]).unwrap()) < 1e-300);
    assert!(matches!(
        ops::cross_entropy(&tape, logits, &[3]),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let b = batch(1, 11);
    let mut model = Model::new(small_config(), ntu_graph(), 4).unwrap();
    for stats in model.running_stats_mut() {
        stats.mean.fill(0.25);
        stats.var.fill(1.5);
    }
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.params(), model.params());
    assert_eq!(loaded.running_stats(), model.running_stats());
    let refs: Vec<&FeatureTensor> = b.samples.iter().collect();
    let adj: Vec<&StructuralAdjacency> = b.structural.iter().collect();
    assert!(bitwise_eq(&model.predict(&refs, &adj).unwrap(), &loaded.predict(&refs, &adj).unwrap()));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::BadBinary { .. })));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::BadBinary { .. })));
}
