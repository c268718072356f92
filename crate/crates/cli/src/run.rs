//! Training, evaluation, gradient checks and complexity reports.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use serde::Serialize;
use spst_core::graph::ntu_graph;
use spst_core::nn::{
    batch_adjacency, batch_input, edge_node_similarity, load_checkpoint, run_check, save_checkpoint, CheckTarget,
    Model, RunMode, StructuralInput, Tape,
};
use spst_core::preprocess::Branch;
use spst_core::struct_adj::{AdjacencyCache, StructuralAdjacency};
use spst_core::train_eval::{
    accuracy, branch_logits, fuse_logits, predictions, subset_grid, subset_label, train_branch, EpochRecord,
    SampleSet, TrainConfig,
};
use spst_core::FeatureTensor;

use crate::data::{adjacency_key, load_branch_set, IndexEntry};
use crate::error::{CliError, CliResult};

pub fn parse_branches(text: &str) -> CliResult<Vec<Branch>> {
    let mut out = Vec::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let b = Branch::from_name(name)
            .ok_or_else(|| CliError::input(format!("unknown branch `{name}` (expected joint, velocity or bone)")))?;
        if !out.contains(&b) {
            out.push(b);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("no branches selected"));
    }
    Ok(out)
}

/// Samples of `index` at `rows` with the structural matrices for `branch`. Per-branch
/// cache entries take precedence over per-sample ones; without a cache every matrix is
/// the identity, which only a model with the structural branch disabled may use.
pub fn sample_set(
    cache: &Path,
    index: &[IndexEntry],
    rows: &[usize],
    adjacency: Option<&AdjacencyCache>,
    branch: Branch,
) -> CliResult<SampleSet> {
    let joints = ntu_graph().joint_count();
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut structural = Vec::with_capacity(rows.len());
    for &i in rows {
        let e = &index[i];
        features.push(load_branch_set(cache, &e.stem)?);
        labels.push(e.label);
        structural.push(match adjacency {
            Some(c) => c
                .get(&adjacency_key(&e.stem, Some(branch)))
                .or_else(|| c.get(&e.stem))
                .cloned()
                .ok_or_else(|| CliError::input(format!("no structural adjacency for sample `{}`", e.stem)))?,
            None => StructuralAdjacency::identity(joints),
        });
    }
    Ok(SampleSet::new(features, labels, structural)?)
}

pub fn load_adjacency(path: &Path, required: bool) -> CliResult<Option<AdjacencyCache>> {
    if !required && !path.exists() {
        return Ok(None);
    }
    if !path.exists() {
        return Err(CliError::input(format!(
            "structural adjacency cache {} not found (run `spst adjacency` or pass --no-structural)",
            path.display()
        )));
    }
    Ok(Some(AdjacencyCache::load(path)?))
}

#[derive(Debug, Serialize)]
struct Summary {
    branches: Vec<String>,
    train_samples: usize,
    eval_samples: usize,
    final_train_accuracy: Vec<(String, f64)>,
    branch_eval_accuracy: Vec<(String, f64)>,
    fused_eval_accuracy: Option<f64>,
    wall_time_secs: f64,
}

pub struct TrainJob<'a> {
    pub cache: &'a Path,
    pub index: &'a [IndexEntry],
    pub train_rows: &'a [usize],
    pub eval_rows: &'a [usize],
    pub adjacency: Option<&'a AdjacencyCache>,
    pub branches: &'a [Branch],
    pub out: &'a Path,
    pub seed: u64,
}

/// Trains one checkpoint per branch and writes `metrics.jsonl` and `summary.json`.
pub fn train(cfg: &TrainConfig, job: &TrainJob) -> CliResult<()> {
    let start = std::time::Instant::now();
    fs::create_dir_all(job.out).map_err(|e| CliError::input(format!("{}: {e}", job.out.display())))?;
    let metrics_path = job.out.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| CliError::input(format!("{}: {e}", metrics_path.display())))?;
    let graph = ntu_graph();
    let mut write_err = None;
    let mut on_record = |r: &EpochRecord| {
        if let Some(loss) = r.loss {
            eprintln!("[{}] epoch {:>3} {} loss {:.4} acc {:.3} lr {:.5}", r.branch, r.epoch, r.split, loss, r.accuracy, r.lr);
        } else {
            eprintln!("[{}] epoch {:>3} {} acc {:.3}", r.branch, r.epoch, r.split, r.accuracy);
        }
        if let Err(e) = writeln!(metrics, "{}", r.to_json_line()) {
            write_err.get_or_insert(e);
        }
    };

    let mut final_train = Vec::new();
    let mut eval_logits = Vec::new();
    let mut eval_labels = Vec::new();
    for &branch in job.branches {
        let train_set = sample_set(job.cache, job.index, job.train_rows, job.adjacency, branch)?;
        let eval_set = if job.eval_rows.is_empty() {
            None
        } else {
            Some(sample_set(job.cache, job.index, job.eval_rows, job.adjacency, branch)?)
        };
        let run = train_branch(cfg, &graph, &train_set, eval_set.as_ref(), branch, job.seed, &mut on_record)?;
        let last_train = run.records.iter().rev().find(|r| r.split == "train").map_or(f64::NAN, |r| r.accuracy);
        final_train.push((branch.name().to_string(), last_train));
        let path = job.out.join(format!("{}.ckpt", branch.name()));
        save_checkpoint(&run.model, &path)?;
        if let Some(set) = &eval_set {
            eval_logits.push((branch, branch_logits(&run.model, set, branch, cfg.batch_size)?));
            eval_labels = set.labels.clone();
        }
    }
    if let Some(e) = write_err {
        return Err(CliError::input(format!("{}: {e}", metrics_path.display())));
    }
    let branch_eval_accuracy: Vec<(String, f64)> = eval_logits
        .iter()
        .map(|(b, l)| (b.name().to_string(), accuracy(&predictions(l), &eval_labels)))
        .collect();
    let fused_eval_accuracy = if eval_logits.is_empty() {
        None
    } else {
        let all: Vec<_> = eval_logits.iter().map(|(_, l)| l).collect();
        Some(accuracy(&predictions(&fuse_logits(&all, None)?), &eval_labels))
    };
    for (name, acc) in &branch_eval_accuracy {
        println!("{name:<10} eval accuracy {acc:.4}");
    }
    if let Some(acc) = fused_eval_accuracy {
        println!("{:<10} eval accuracy {acc:.4}", "fused");
    }
    let summary = Summary {
        branches: job.branches.iter().map(|b| b.name().to_string()).collect(),
        train_samples: job.train_rows.len(),
        eval_samples: job.eval_rows.len(),
        final_train_accuracy: final_train,
        branch_eval_accuracy,
        fused_eval_accuracy,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let path = job.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub struct EvalJob<'a> {
    pub cache: &'a Path,
    pub index: &'a [IndexEntry],
    pub rows: &'a [usize],
    pub adjacency: Option<&'a AdjacencyCache>,
    pub checkpoints: &'a Path,
    pub branches: &'a [Branch],
    pub weights: Option<&'a [f64]>,
    pub batch_size: usize,
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub branch_accuracy: Vec<(Branch, f64)>,
    pub fused_accuracy: f64,
}

/// Mean edge-node cosine similarity of the last block's features over `set`.
fn edge_similarity(model: &Model, set: &SampleSet, branch: Branch, batch_size: usize) -> CliResult<f64> {
    let nodes = model.graph().edge_nodes().to_vec();
    let (mut total, mut count) = (0.0, 0usize);
    for range in spst_core::train_eval::batches(set.len(), batch_size) {
        let samples: Vec<&FeatureTensor> = range.clone().map(|i| set.features[i].get(branch)).collect();
        let mats: Vec<&StructuralAdjacency> = range.clone().map(|i| &set.structural[i]).collect();
        let (input, bodies) = batch_input(&samples)?;
        let st = StructuralInput { adjacency: Rc::new(batch_adjacency(&mats)?), bodies };
        let tape = Tape::new();
        let vars = model.params().bind(&tape);
        let x = tape.input(input);
        let pass = model.forward(&tape, &vars, x, Some(&st), bodies, RunMode::Eval)?;
        total += edge_node_similarity(&tape.value(pass.features), &nodes)? * range.len() as f64;
        count += range.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub fn eval(job: &EvalJob) -> CliResult<EvalOutcome> {
    if job.rows.is_empty() {
        return Err(CliError::input("the evaluation split is empty"));
    }
    if let Some(w) = job.weights {
        if w.len() != job.branches.len() {
            return Err(CliError::input(format!("{} fusion weights for {} branches", w.len(), job.branches.len())));
        }
    }
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for &branch in job.branches {
        let path = job.checkpoints.join(format!("{}.ckpt", branch.name()));
        let model = load_checkpoint(&path)?;
        if model.config().structural && job.adjacency.is_none() {
            return Err(CliError::input(format!(
                "{} uses the structural branch but no adjacency cache was found",
                path.display()
            )));
        }
        let set = sample_set(job.cache, job.index, job.rows, job.adjacency, branch)?;
        if let Some(&label) = set.labels.iter().find(|&&l| l >= model.config().classes) {
            return Err(spst_core::Error::LabelOutOfRange { label, classes: model.config().classes }.into());
        }
        if job.diagnostics {
            let sim = edge_similarity(&model, &set, branch, job.batch_size)?;
            println!("{:<10} edge-node feature cosine similarity {sim:.4}", branch.name());
        }
        logits.push((branch, branch_logits(&model, &set, branch, job.batch_size)?));
        labels = set.labels;
    }
    let branch_accuracy: Vec<(Branch, f64)> =
        logits.iter().map(|(b, l)| (*b, accuracy(&predictions(l), &labels))).collect();
    let all: Vec<_> = logits.iter().map(|(_, l)| l).collect();
    let fused_accuracy = accuracy(&predictions(&fuse_logits(&all, job.weights)?), &labels);

    println!("samples    {}", labels.len());
    for (b, acc) in &branch_accuracy {
        println!("{:<10} accuracy {acc:.4}", b.name());
    }
    println!("{:<10} accuracy {fused_accuracy:.4}", "fused");
    if logits.len() > 1 {
        println!("subset fusion:");
        for (subset, acc) in subset_grid(&logits, &labels)? {
            println!("  {:<24} {acc:.4}", subset_label(&subset));
        }
    }
    Ok(EvalOutcome { branch_accuracy, fused_accuracy })
}

/// Runs the gradient checks and prints one table per target; fails if any exceeds
/// its tolerance.
pub fn gradcheck(targets: &[CheckTarget], seeds: &[u64]) -> CliResult<()> {
    let mut failures = Vec::new();
    println!("{:<14} {:>6} {:>14} {:>10}  status", "target", "seed", "max rel err", "tolerance");
    for &target in targets {
        for &seed in seeds {
            let report = run_check(target, seed)?;
            let status = if report.passed() { "ok" } else { "FAIL" };
            println!(
                "{:<14} {:>6} {:>14.3e} {:>10.0e}  {status}",
                target.name(),
                seed,
                report.max_rel_error(),
                report.tolerance
            );
            if !report.passed() {
                eprintln!("{report}");
                failures.push(format!("{} (seed {seed})", target.name()));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check exceeded tolerance: {}", failures.join(", "))))
    }
}
