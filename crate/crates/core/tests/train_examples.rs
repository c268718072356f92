use ndarray::{arr2, ArrayD, IxDyn};
use spst_core::graph::ntu_graph;
use spst_core::nn::ModelConfig;
use spst_core::preprocess::Branch;
use spst_core::skeleton_io::{generate_synthetic_dataset, SyntheticSpec};
use spst_core::struct_adj::DtwConfig;
use spst_core::train_eval::{
    batches, cosine_lr, count_params_flops, fuse_scores, sgd_step, structural_param_count, subset_grid, subset_label,
    train_branch, ComplexityReport, InputShape, OptimState, SampleSet, Schedule, TrainConfig,
};

#[test]
fn two_nesterov_steps_match_hand_recursion() {
    let (lr, mu, wd) = (0.1, 0.9, 0.01);
    let mut p = [2.0];
    let mut v = [0.0];
    let grads = [0.5, -0.25];
    let (mut hp, mut hv) = (2.0f64, 0.0f64);
    for g in grads {
        sgd_step(&mut p, &[g], &mut v, lr, mu, wd, true);
        let g = g + wd * hp;
        hv = mu * hv + g;
        hp -= lr * (g + mu * hv);
    }
    assert!((p[0] - hp).abs() <= 1e-15);
    assert!((v[0] - hv).abs() <= 1e-15);
}

#[test]
fn optimizer_state_rejects_mismatched_gradients() {
    let mut params = vec![ArrayD::zeros(IxDyn(&[2, 2]))];
    let mut opt = OptimState::new(&params, 0.9, 0.0, true);
    assert!(opt.step(&mut params, &[ArrayD::zeros(IxDyn(&[3]))], 0.1).is_err());
    assert!(opt.step(&mut params, &[], 0.1).is_err());
}

#[test]
fn schedule_reference_points() {
    assert_eq!(cosine_lr(5), 0.1);
    assert!((cosine_lr(30) - 0.05).abs() <= 1e-12);
    assert_eq!(cosine_lr(50), 0.0);
    assert_eq!(cosine_lr(80), 0.0);
    let s = Schedule { base_lr: 0.2, warm_epochs: 2, total_epochs: 10 };
    assert_eq!(s.lr(2), 0.2);
    assert!((s.lr(6) - 0.1).abs() <= 1e-12);
}

#[test]
fn batch_partitioning() {
    let b = batches(120, 16);
    assert_eq!(b.len(), 8);
    assert_eq!(b.last().unwrap().len(), 8);
    assert_eq!(b.iter().map(|r| r.len()).sum::<usize>(), 120);
}

#[test]
fn fusion_examples() {
    let s = arr2(&[[0.2, 0.9, 0.1], [0.7, 0.1, 0.3]]);
    assert_eq!(fuse_scores(&[&s, &s, &s], None).unwrap(), vec![1, 0]);
    let zero = arr2(&[[1.0, 0.0]]);
    let one = arr2(&[[0.0, 1.0]]);
    assert_eq!(fuse_scores(&[&zero, &zero, &one], None).unwrap(), vec![0]);
    assert_eq!(fuse_scores(&[&zero, &one], Some(&[1.0, 2.0])).unwrap(), vec![1]);
}

#[test]
fn subset_grid_covers_every_combination() {
    let s = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
    let inputs: Vec<(Branch, _)> = Branch::ALL.iter().map(|&b| (b, s.clone())).collect();
    let grid = subset_grid(&inputs, &[0, 1]).unwrap();
    let labels: Vec<String> = grid.iter().map(|(b, _)| subset_label(b)).collect();
    assert_eq!(
        labels,
        ["Joint", "Velocity", "Bone", "Joint+Velocity", "Joint+Bone", "Velocity+Bone", "Joint+Velocity+Bone"]
    );
    assert!(grid.iter().all(|(_, acc)| *acc == 1.0));
}

#[test]
fn complexity_counts_match_the_model() {
    let graph = ntu_graph();
    for plan in ["8,8", "16,16/2,24", "32,32,48/2,48,64/2"] {
        for structural in [false, true] {
            let cfg = ModelConfig { plan: plan.parse().unwrap(), structural, ..ModelConfig::default() };
            let model = spst_core::nn::Model::new(cfg.clone(), graph.clone(), 0).unwrap();
            assert_eq!(count_params_flops(&cfg, InputShape::default()).params, model.params().scalar_count(), "{plan}");
        }
    }
    let cfg = ModelConfig::default();
    let report = ComplexityReport::new(&cfg, InputShape::default());
    assert_eq!(report.spst.params - report.sp.params, structural_param_count(&cfg));
    assert!(report.spst.flops > report.sp.flops);
}

fn desk_sets(seed: u64) -> (SampleSet, SampleSet) {
    let spec = SyntheticSpec { samples_per_class: 20, bodies: 1, ..SyntheticSpec::default() };
    let data = generate_synthetic_dataset(&spec, seed).unwrap();
    let all = SampleSet::from_raw(&data.tensors, data.labels, &ntu_graph(), &DtwConfig::default()).unwrap();
    (all.subset(&(0..48).collect::<Vec<_>>()), all.subset(&(48..60).collect::<Vec<_>>()))
}

fn desk_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { plan: "8/2,8,16/2,16".parse().unwrap(), kernel: 3, classes: 3, ..ModelConfig::default() },
        schedule: Schedule { base_lr: 0.1, warm_epochs: epochs, total_epochs: epochs },
        epochs,
        batch_size: 16,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_seed_training_is_reproducible() {
    let (train, eval) = desk_sets(0);
    let cfg = desk_config(1);
    let a = train_branch(&cfg, &ntu_graph(), &train, Some(&eval), Branch::Joint, 5, &mut |_| {}).unwrap();
    let b = train_branch(&cfg, &ntu_graph(), &train, Some(&eval), Branch::Joint, 5, &mut |_| {}).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.records, b.records);
}

#[test]
fn loss_decreases_over_the_first_two_epochs() {
    let mut decreased = 0;
    for seed in 0..10 {
        let (train, _) = desk_sets(seed);
        let run = train_branch(&desk_config(2), &ntu_graph(), &train, None, Branch::Joint, seed, &mut |_| {}).unwrap();
        let losses: Vec<f64> = run.records.iter().filter_map(|r| r.loss).collect();
        if losses[1] < losses[0] {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased in {decreased}/10 seeds");
}

#[test]
fn labels_beyond_the_class_count_are_rejected() {
    let (train, _) = desk_sets(1);
    let cfg = TrainConfig { model: ModelConfig { classes: 2, ..desk_config(1).model }, ..desk_config(1) };
    assert!(matches!(
        train_branch(&cfg, &ntu_graph(), &train, None, Branch::Joint, 0, &mut |_| {}),
        Err(spst_core::Error::LabelOutOfRange { .. })
    ));
}
