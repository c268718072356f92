//! Optimization, learning-rate schedule, branch fusion, metrics and complexity counts.

pub mod complexity;
pub mod fusion;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use complexity::{count_params_flops, structural_param_count, Complexity, ComplexityReport, InputShape};
pub use fusion::{accuracy, argmax, fuse_logits, fuse_scores, predictions, subset_grid, subset_label};
pub use optim::{sgd_step, OptimState};
pub use schedule::{cosine_lr, Schedule};
pub use trainer::{
    batches, branch_logits, evaluate, train, train_branch, BranchRun, EpochRecord, EvalReport, RunMetrics, SampleSet,
    TrainConfig,
};
