//! Per-branch training, evaluation and run metrics.

use std::ops::Range;
use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array2, Ix2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fusion::{accuracy, fuse_logits, predictions, subset_grid};
use super::optim::{OptimState, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use super::schedule::Schedule;
use crate::graph::GraphSpec;
use crate::nn::{batch_adjacency, batch_input, ops, Model, ModelConfig, RunMode, StructuralInput, Tape};
use crate::preprocess::{preprocess_all, Branch, BranchSet};
use crate::struct_adj::{dataset_adjacency, DtwConfig, StructuralAdjacency};
use crate::{Error, FeatureTensor, Result};

/// Preprocessed samples with labels and structural matrices, in a fixed order.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub features: Vec<BranchSet>,
    pub labels: Vec<usize>,
    pub structural: Vec<StructuralAdjacency>,
}

impl SampleSet {
    pub fn new(features: Vec<BranchSet>, labels: Vec<usize>, structural: Vec<StructuralAdjacency>) -> Result<Self> {
        if features.len() != labels.len() || structural.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature sets, {} labels, {} structural matrices",
                features.len(),
                labels.len(),
                structural.len()
            )));
        }
        Ok(Self { features, labels, structural })
    }

    /// Branch features and structural matrices computed from raw coordinates.
    pub fn from_raw(raw: &[FeatureTensor], labels: Vec<usize>, graph: &GraphSpec, dtw: &DtwConfig) -> Result<Self> {
        let features = raw.iter().map(|x| preprocess_all(x, graph)).collect::<Result<Vec<_>>>()?;
        let structural = dataset_adjacency(raw, graph, dtw)?;
        Self::new(features, labels, structural)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            structural: indices.iter().map(|&i| self.structural[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Evaluate on the held-out set every this many epochs; 0 evaluates only after
    /// the last epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: Schedule::default(),
            epochs: 50,
            batch_size: 16,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            nesterov: true,
            eval_every: 1,
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub branch: String,
    pub split: String,
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub branch_eval_accuracy: Vec<(String, f64)>,
    pub fused_eval_accuracy: Option<f64>,
    pub wall_time_secs: f64,
}

pub struct BranchRun {
    pub branch: Branch,
    pub model: Model,
    pub records: Vec<EpochRecord>,
}

/// Consecutive index ranges of at most `batch_size` covering `0..n`.
pub fn batches(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let size = batch_size.max(1);
    (0..n).step_by(size).map(|start| start..(start + size).min(n)).collect()
}

fn branch_index(branch: Branch) -> u64 {
    Branch::ALL.iter().position(|&b| b == branch).expect("known branch") as u64
}

fn batch_structural(set: &SampleSet, idx: &[usize], bodies: usize, enabled: bool) -> Result<Option<StructuralInput>> {
    if !enabled {
        return Ok(None);
    }
    let mats: Vec<&StructuralAdjacency> = idx.iter().map(|&i| &set.structural[i]).collect();
    Ok(Some(StructuralInput { adjacency: Rc::new(batch_adjacency(&mats)?), bodies }))
}

/// Eval-mode scores `(N, classes)` of `model` on every sample of `set`.
pub fn branch_logits(model: &Model, set: &SampleSet, branch: Branch, batch_size: usize) -> Result<Array2<f64>> {
    let classes = model.config().classes;
    let mut out = Array2::zeros((set.len(), classes));
    for range in batches(set.len(), batch_size) {
        let idx: Vec<usize> = range.clone().collect();
        let samples: Vec<&FeatureTensor> = idx.iter().map(|&i| set.features[i].get(branch)).collect();
        let (input, bodies) = batch_input(&samples)?;
        let structural = batch_structural(set, &idx, bodies, model.config().structural)?;
        let tape = Tape::new();
        let vars = model.params().bind(&tape);
        let x = tape.input(input);
        let pass = model.forward(&tape, &vars, x, structural.as_ref(), bodies, RunMode::Eval)?;
        let logits = tape.value(pass.logits);
        let logits = logits.view().into_dimensionality::<Ix2>().expect("logits are 2-D");
        out.slice_mut(ndarray::s![range, ..]).assign(&logits);
    }
    Ok(out)
}

/// Trains one model on `branch`. Initialization, shuffling and dropout all derive from
/// `seed` and the branch, so runs are reproducible and the models of two configs that
/// differ only in the structural flag share every random draw.
pub fn train_branch(
    cfg: &TrainConfig,
    graph: &GraphSpec,
    train: &SampleSet,
    eval: Option<&SampleSet>,
    branch: Branch,
    seed: u64,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<BranchRun> {
    if train.is_empty() {
        return Err(Error::ShapeMismatch("empty training set".into()));
    }
    if let Some(&label) = train.labels.iter().find(|&&l| l >= cfg.model.classes) {
        return Err(Error::LabelOutOfRange { label, classes: cfg.model.classes });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(branch_index(branch) + 1);
    let mut model = Model::new(cfg.model.clone(), graph.clone(), rng.gen())?;
    let mut optim = OptimState::new(model.params().values(), cfg.momentum, cfg.weight_decay, cfg.nesterov);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut emit = |r: EpochRecord, records: &mut Vec<EpochRecord>| {
        on_record(&r);
        records.push(r);
    };

    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for range in batches(order.len(), cfg.batch_size) {
            let idx = &order[range];
            let samples: Vec<&FeatureTensor> = idx.iter().map(|&i| train.features[i].get(branch)).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (input, bodies) = batch_input(&samples)?;
            let structural = batch_structural(train, idx, bodies, cfg.model.structural)?;

            let tape = Tape::new();
            let vars = model.params().bind(&tape);
            let x = tape.input(input);
            let mode = RunMode::Train { dropout_seed: rng.gen() };
            let pass = model.forward(&tape, &vars, x, structural.as_ref(), bodies, mode)?;
            let loss = ops::cross_entropy(&tape, pass.logits, &labels)?;
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!("{} branch, epoch {epoch}: loss {loss_value}", branch.name())));
            }
            let logits = (*tape.value(pass.logits)).clone().into_dimensionality::<Ix2>().expect("logits are 2-D");
            correct += predictions(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
            loss_sum += loss_value * idx.len() as f64;

            let grads = tape.backward(loss);
            let grads: Vec<_> =
                vars.iter().zip(model.params().values()).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
            optim.step(model.params_mut().values_mut(), &grads, lr)?;
            model.update_running_stats(&pass.batch_stats)?;
        }
        let n = train.len() as f64;
        emit(
            EpochRecord {
                epoch,
                branch: branch.name().into(),
                split: "train".into(),
                loss: Some(loss_sum / n),
                accuracy: correct as f64 / n,
                lr,
            },
            &mut records,
        );
        let due = if cfg.eval_every == 0 { epoch == cfg.epochs } else { epoch % cfg.eval_every == 0 || epoch == cfg.epochs };
        if let (Some(set), true) = (eval, due) {
            let logits = branch_logits(&model, set, branch, cfg.batch_size)?;
            emit(
                EpochRecord {
                    epoch,
                    branch: branch.name().into(),
                    split: "eval".into(),
                    loss: None,
                    accuracy: accuracy(&predictions(&logits), &set.labels),
                    lr,
                },
                &mut records,
            );
        }
    }
    Ok(BranchRun { branch, model, records })
}

/// Per-branch, fused and subset-fusion accuracies of trained models on `set`.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub logits: Vec<(Branch, Array2<f64>)>,
    pub branch_accuracy: Vec<(Branch, f64)>,
    pub fused_accuracy: f64,
    pub grid: Vec<(Vec<Branch>, f64)>,
}

pub fn evaluate(models: &[(Branch, &Model)], set: &SampleSet, batch_size: usize) -> Result<EvalReport> {
    let logits = models
        .iter()
        .map(|(b, m)| Ok((*b, branch_logits(m, set, *b, batch_size)?)))
        .collect::<Result<Vec<_>>>()?;
    let branch_accuracy = logits.iter().map(|(b, l)| (*b, accuracy(&predictions(l), &set.labels))).collect();
    let all: Vec<&Array2<f64>> = logits.iter().map(|(_, l)| l).collect();
    let fused_accuracy = accuracy(&predictions(&fuse_logits(&all, None)?), &set.labels);
    let grid = subset_grid(&logits, &set.labels)?;
    Ok(EvalReport { logits, branch_accuracy, fused_accuracy, grid })
}

/// Trains one model per branch in `branches` and evaluates them, alone and fused.
pub fn train(
    cfg: &TrainConfig,
    graph: &GraphSpec,
    train_set: &SampleSet,
    eval_set: Option<&SampleSet>,
    branches: &[Branch],
    seed: u64,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<(Vec<BranchRun>, RunMetrics)> {
    let start = Instant::now();
    let runs = branches
        .iter()
        .map(|&b| train_branch(cfg, graph, train_set, eval_set, b, seed, on_record))
        .collect::<Result<Vec<_>>>()?;
    let epochs = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let (branch_eval_accuracy, fused_eval_accuracy) = match eval_set {
        Some(set) => {
            let models: Vec<(Branch, &Model)> = runs.iter().map(|r| (r.branch, &r.model)).collect();
            let report = evaluate(&models, set, cfg.batch_size)?;
            (
                report.branch_accuracy.iter().map(|(b, a)| (b.name().to_string(), *a)).collect(),
                Some(report.fused_accuracy),
            )
        }
        None => (Vec::new(), None),
    };
    let metrics = RunMetrics { epochs, branch_eval_accuracy, fused_eval_accuracy, wall_time_secs: start.elapsed().as_secs_f64() };
    Ok((runs, metrics))
}
