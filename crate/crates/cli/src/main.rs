mod config;
mod data;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use spst_core::dtw::DEFAULT_RADIUS;
use spst_core::nn::{ChannelPlan, CheckTarget, ModelConfig};
use spst_core::skeleton_io::{SyntheticSpec, DEFAULT_BODY_CAPACITY, DEFAULT_TARGET_FRAMES};
use spst_core::struct_adj::{DtwConfig, DEFAULT_EPSILON};
use spst_core::train_eval::{ComplexityReport, InputShape, Schedule, TrainConfig};

use data::{SplitKind, ADJACENCY_FILE};
use error::{CliError, CliResult};

const DEFAULT_PLAN: &str = "32,32,48/2,48,64/2";

#[derive(Parser, Debug)]
#[command(name = "spst", version, about = "Skeleton action recognition with spatial and structural graph convolutions")]
#[command(args_override_self = true)]
struct Cli {
    /// Flat `key = value` file of flag defaults; flags on the command line win.
    #[arg(long, global = true, env = config::CONFIG_ENV, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parsing and DTW; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic skeleton dataset and manifest.
    #[command(args_override_self = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training samples per class.
        #[arg(long, default_value_t = 40)]
        samples_per_class: usize,
        /// Evaluation samples per class.
        #[arg(long, default_value_t = 20)]
        eval_per_class: usize,
        #[arg(long, default_value_t = DEFAULT_TARGET_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_BODY_CAPACITY)]
        bodies: usize,
        /// Per-joint jitter standard deviation in meters.
        #[arg(long, default_value_t = 0.005)]
        noise: f64,
    },
    /// Parse skeleton files into cached joint, velocity and bone features.
    #[command(args_override_self = true)]
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recompute entries that are already up to date.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = DEFAULT_TARGET_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_BODY_CAPACITY)]
        bodies: usize,
    },
    /// Compute per-sample structural adjacency from a feature cache.
    #[command(args_override_self = true)]
    Adjacency {
        /// Feature cache written by `preprocess`.
        #[arg(long)]
        cache: PathBuf,
        /// Output file [default: <cache>/adjacency.bin].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: usize,
        /// Use raw DTW costs instead of path-length normalized ones.
        #[arg(long)]
        no_normalize: bool,
        /// One matrix per sample and branch, from that branch's features.
        #[arg(long)]
        per_branch: bool,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Train one model per branch.
    #[command(args_override_self = true)]
    Train {
        #[arg(long)]
        cache: PathBuf,
        /// Structural adjacency cache [default: <cache>/adjacency.bin].
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// Directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Epochs at the base rate before cosine decay.
        #[arg(long, default_value_t = 10)]
        warm_epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Block widths with optional `/stride`; the first entry is the initial block.
        #[arg(long, default_value = DEFAULT_PLAN)]
        plan: ChannelPlan,
        /// Temporal kernel size (odd).
        #[arg(long, default_value_t = 5)]
        kernel: usize,
        #[arg(long, default_value_t = 0.25)]
        dropout: f64,
        /// Train the spatial-only model.
        #[arg(long)]
        no_structural: bool,
        #[arg(long, default_value = "joint,velocity,bone")]
        branches: String,
        #[arg(long, value_enum, default_value_t = SplitKind::Xsub)]
        split: SplitKind,
        /// Evaluate every this many epochs; 0 evaluates after the last one only.
        #[arg(long, default_value_t = 1)]
        eval_every: usize,
        /// Class count [default: largest label + 1].
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Evaluate trained checkpoints alone and fused.
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        cache: PathBuf,
        /// Structural adjacency cache [default: <cache>/adjacency.bin].
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// Directory holding `<branch>.ckpt` files.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitKind::Xsub)]
        split: SplitKind,
        #[arg(long, default_value = "joint,velocity,bone")]
        branches: String,
        /// Comma-separated fusion weights, one per branch.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Also print edge-node feature similarity per branch.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Compare reverse-mode gradients with central differences.
    #[command(args_override_self = true)]
    Gradcheck {
        /// Comma-separated targets, or `all`.
        #[arg(long, default_value = "all")]
        target: String,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Report parameters and multiply-adds with and without the structural branch.
    #[command(args_override_self = true)]
    Complexity {
        #[arg(long, default_value = DEFAULT_PLAN)]
        plan: ChannelPlan,
        #[arg(long, default_value_t = 5)]
        kernel: usize,
        #[arg(long, default_value_t = 60)]
        classes: usize,
        #[arg(long, default_value_t = DEFAULT_TARGET_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = 25)]
        joints: usize,
        #[arg(long, default_value_t = DEFAULT_BODY_CAPACITY)]
        bodies: usize,
        /// Report only the spatial-only model.
        #[arg(long)]
        no_structural: bool,
    },
}

fn parse_weights(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|_| CliError::input(format!("bad fusion weight `{w}`"))))
        .collect()
}

fn parse_targets(text: &str) -> CliResult<Vec<CheckTarget>> {
    if text.trim() == "all" {
        return Ok(CheckTarget::ALL.to_vec());
    }
    text.split(',')
        .map(|t| {
            CheckTarget::from_name(t.trim()).ok_or_else(|| {
                let known: Vec<_> = CheckTarget::ALL.iter().map(|t| t.name()).collect();
                CliError::input(format!("unknown gradcheck target `{t}` (known: {})", known.join(", ")))
            })
        })
        .collect()
}

fn execute(cli: Cli) -> CliResult<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { out, samples_per_class, eval_per_class, frames, bodies, noise } => {
            let spec = SyntheticSpec { samples_per_class, frames, bodies, noise_std: noise, ..SyntheticSpec::default() };
            let n = data::synth(&out, &spec, eval_per_class, cli.seed)?;
            println!("wrote {n} skeleton files and {}", out.join("manifest.tsv").display());
        }
        Command::Preprocess { manifest, out, force, frames, bodies } => {
            let s = data::preprocess(&manifest, &out, force, frames, bodies)?;
            println!("preprocessed {} entries, {} up to date", s.computed, s.skipped);
        }
        Command::Adjacency { cache, out, radius, no_normalize, per_branch, epsilon } => {
            let dtw = DtwConfig { radius, normalize: !no_normalize, epsilon };
            let (adj, s) = data::adjacency(&cache, &dtw, per_branch)?;
            let out = out.unwrap_or_else(|| cache.join(ADJACENCY_FILE));
            adj.save(&out)?;
            println!("wrote {} matrices to {}", s.entries, out.display());
            println!("edge-node off-diagonals: min {:.6}, median {:.6}", s.min_off_diagonal, s.median_off_diagonal);
        }
        Command::Train {
            cache,
            adjacency,
            out,
            epochs,
            warm_epochs,
            lr,
            batch_size,
            plan,
            kernel,
            dropout,
            no_structural,
            branches,
            split,
            eval_every,
            classes,
        } => {
            let index = data::read_index(&cache)?;
            let classes = classes.unwrap_or_else(|| index.iter().map(|e| e.label + 1).max().unwrap_or(0));
            let model = ModelConfig { plan, kernel, dropout, classes, structural: !no_structural, ..ModelConfig::default() };
            model.validate()?;
            if batch_size == 0 {
                return Err(CliError::input("batch size must be positive"));
            }
            let cfg = TrainConfig {
                model,
                schedule: Schedule { base_lr: lr, warm_epochs, total_epochs: epochs },
                epochs,
                batch_size,
                eval_every,
                ..TrainConfig::default()
            };
            let adjacency = run::load_adjacency(&adjacency.unwrap_or_else(|| cache.join(ADJACENCY_FILE)), !no_structural)?;
            let branches = run::parse_branches(&branches)?;
            let (train_rows, eval_rows) = data::split_indices(&index, split);
            if train_rows.is_empty() {
                return Err(CliError::input("the training split is empty"));
            }
            let job = run::TrainJob {
                cache: &cache,
                index: &index,
                train_rows: &train_rows,
                eval_rows: &eval_rows,
                adjacency: adjacency.as_ref(),
                branches: &branches,
                out: &out,
                seed: cli.seed,
            };
            run::train(&cfg, &job)?;
        }
        Command::Eval { cache, adjacency, checkpoints, split, branches, weights, batch_size, diagnostics } => {
            let index = data::read_index(&cache)?;
            let adjacency = run::load_adjacency(&adjacency.unwrap_or_else(|| cache.join(ADJACENCY_FILE)), false)?;
            let branches = run::parse_branches(&branches)?;
            let weights = weights.as_deref().map(parse_weights).transpose()?;
            let (_, rows) = data::split_indices(&index, split);
            run::eval(&run::EvalJob {
                cache: &cache,
                index: &index,
                rows: &rows,
                adjacency: adjacency.as_ref(),
                checkpoints: &checkpoints,
                branches: &branches,
                weights: weights.as_deref(),
                batch_size: batch_size.max(1),
                diagnostics,
            })?;
        }
        Command::Gradcheck { target, seeds } => {
            let targets = parse_targets(&target)?;
            let seeds: Vec<u64> = (cli.seed..cli.seed + seeds.max(1)).collect();
            run::gradcheck(&targets, &seeds)?;
        }
        Command::Complexity { plan, kernel, classes, frames, joints, bodies, no_structural } => {
            let cfg = ModelConfig { plan, kernel, classes, structural: !no_structural, ..ModelConfig::default() };
            cfg.validate()?;
            let input = InputShape { frames, joints, bodies };
            let report = ComplexityReport::new(&cfg, input);
            if no_structural {
                println!("Sp-GCN params {} MACs/sample {}", report.sp.params, report.sp.flops);
            } else {
                println!("{report}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match config::merge_config(&Cli::command(), std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
