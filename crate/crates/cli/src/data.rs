//! Dataset generation, preprocessing caches and structural adjacency.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rayon::prelude::*;
use spst_core::graph::{ntu_graph, GraphSpec};
use spst_core::preprocess::{load_feature_tensor, preprocess_all, save_feature_tensor, Branch, BranchSet};
use spst_core::skeleton_io::{
    generate_synthetic_sequences, parse_ntu_skeleton_file, to_tensor, write_ntu_skeleton_file, DatasetManifest,
    ManifestEntry, SplitRule, SyntheticSpec, NTU_XSUB_TRAIN_SUBJECTS,
};
use spst_core::struct_adj::{sample_adjacency, AdjacencyCache, DtwConfig};
use spst_core::FeatureTensor;

use crate::error::{CliError, CliResult};

pub const INDEX_FILE: &str = "index.tsv";
pub const ADJACENCY_FILE: &str = "adjacency.bin";
/// Feature files written per sample: the raw coordinates plus one per branch.
pub const FEATURE_KINDS: [&str; 4] = ["raw", "joint", "velocity", "bone"];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

pub fn feature_path(cache: &Path, stem: &str, kind: &str) -> PathBuf {
    cache.join(format!("{stem}.{kind}.feat"))
}

/// Writes `n` synthetic skeleton files and a manifest. Training samples get subjects
/// from the cross-subject training list, evaluation samples get other subjects.
pub fn synth(out: &Path, spec: &SyntheticSpec, eval_per_class: usize, seed: u64) -> CliResult<usize> {
    let train_n = spec.len();
    let full = SyntheticSpec { samples_per_class: spec.samples_per_class + eval_per_class, ..spec.clone() };
    let seqs = generate_synthetic_sequences(&full, seed)?;
    let dir = out.join("skeletons");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let eval_subjects: Vec<u32> = (1..=40).filter(|s| !NTU_XSUB_TRAIN_SUBJECTS.contains(s)).collect();
    let mut entries = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.iter().enumerate() {
        let name = format!("{}.skeleton", seq.source_id);
        let path = dir.join(&name);
        fs::write(&path, write_ntu_skeleton_file(seq)).map_err(|e| io_err(&path, e))?;
        let subject_id = if i < train_n {
            NTU_XSUB_TRAIN_SUBJECTS[i % NTU_XSUB_TRAIN_SUBJECTS.len()]
        } else {
            eval_subjects[i % eval_subjects.len()]
        };
        entries.push(ManifestEntry {
            path: PathBuf::from("skeletons").join(name),
            label: seq.label.expect("synthetic sequences are labeled"),
            subject_id,
            camera_id: 1 + (i % 3) as u32,
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    let path = out.join("manifest.tsv");
    fs::write(&path, manifest.to_text()).map_err(|e| io_err(&path, e))?;
    Ok(seqs.len())
}

/// One preprocessed sample as listed in a cache index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub stem: String,
    pub label: usize,
    pub subject_id: u32,
    pub camera_id: u32,
}

pub fn write_index(cache: &Path, entries: &[IndexEntry]) -> CliResult<()> {
    let mut text = String::from("# stem\tlabel\tsubject\tcamera\n");
    for e in entries {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", e.stem, e.label, e.subject_id, e.camera_id));
    }
    let path = cache.join(INDEX_FILE);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_index(cache: &Path) -> CliResult<Vec<IndexEntry>> {
    let path = cache.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::input(format!("{} line {}: malformed index record", path.display(), i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [stem, label, subject, camera] = fields[..] else { return Err(bad()) };
        out.push(IndexEntry {
            stem: stem.to_string(),
            label: label.parse().map_err(|_| bad())?,
            subject_id: subject.parse().map_err(|_| bad())?,
            camera_id: camera.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn up_to_date(source: &Path, outputs: &[PathBuf]) -> bool {
    let Some(src) = modified(source) else { return false };
    outputs.iter().all(|p| modified(p).is_some_and(|t| t >= src))
}

fn stem_of(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::input(format!("cannot derive a sample name from {}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub computed: usize,
    pub skipped: usize,
}

fn preprocess_entry(source: &Path, outputs: &[PathBuf], graph: &GraphSpec, frames: usize, bodies: usize) -> CliResult<()> {
    let text = fs::read_to_string(source).map_err(|e| io_err(source, e))?;
    let id = source.display().to_string();
    let seq = parse_ntu_skeleton_file(&text, &id, bodies).map_err(|e| CliError::input(format!("{id}: {e}")))?;
    let raw = to_tensor(&seq, frames).map_err(|e| CliError::input(format!("{id}: {e}")))?;
    let set = preprocess_all(&raw, graph)?;
    for (path, tensor) in outputs.iter().zip([&raw, &set.joint, &set.velocity, &set.bone]) {
        save_feature_tensor(path, tensor)?;
    }
    Ok(())
}

/// Parses every manifest entry into per-branch feature files under `out` plus an index.
/// Entries whose outputs are newer than their source are skipped unless `force`.
pub fn preprocess(manifest_path: &Path, out: &Path, force: bool, frames: usize, bodies: usize) -> CliResult<PreprocessSummary> {
    let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let graph = ntu_graph();

    let mut stems = std::collections::HashSet::new();
    let mut jobs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let source = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let stem = stem_of(&entry.path)?;
        if !stems.insert(stem.clone()) {
            return Err(CliError::input(format!("two manifest entries share the sample name `{stem}`")));
        }
        if !source.is_file() {
            return Err(CliError::input(format!("missing skeleton file {}", source.display())));
        }
        let outputs: Vec<PathBuf> = FEATURE_KINDS.iter().map(|k| feature_path(out, &stem, k)).collect();
        jobs.push((source, outputs));
    }

    let results: Vec<CliResult<bool>> = jobs
        .par_iter()
        .map(|(source, outputs)| {
            if !force && up_to_date(source, outputs) {
                return Ok(false);
            }
            preprocess_entry(source, outputs, &graph, frames, bodies).map(|_| true).inspect_err(|_| {
                for p in outputs {
                    let _ = fs::remove_file(p);
                }
            })
        })
        .collect();
    let mut summary = PreprocessSummary { computed: 0, skipped: 0 };
    for r in results {
        if r? {
            summary.computed += 1;
        } else {
            summary.skipped += 1;
        }
    }
    let index: Vec<IndexEntry> = manifest
        .entries
        .iter()
        .map(|e| {
            Ok(IndexEntry { stem: stem_of(&e.path)?, label: e.label, subject_id: e.subject_id, camera_id: e.camera_id })
        })
        .collect::<CliResult<_>>()?;
    write_index(out, &index)?;
    Ok(summary)
}

pub fn load_kind(cache: &Path, stem: &str, kind: &str) -> CliResult<FeatureTensor> {
    Ok(load_feature_tensor(&feature_path(cache, stem, kind))?)
}

pub fn load_branch_set(cache: &Path, stem: &str) -> CliResult<BranchSet> {
    Ok(BranchSet {
        joint: load_kind(cache, stem, "joint")?,
        velocity: load_kind(cache, stem, "velocity")?,
        bone: load_kind(cache, stem, "bone")?,
    })
}

pub fn adjacency_key(stem: &str, branch: Option<Branch>) -> String {
    match branch {
        Some(b) => format!("{stem}/{}", b.name()),
        None => stem.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySummary {
    pub entries: usize,
    pub min_off_diagonal: f64,
    pub median_off_diagonal: f64,
}

/// Structural adjacency for every cached sample, from the raw coordinates or, with
/// `per_branch`, from each branch's features.
pub fn adjacency(cache: &Path, dtw: &DtwConfig, per_branch: bool) -> CliResult<(AdjacencyCache, AdjacencySummary)> {
    let index = read_index(cache)?;
    let graph = ntu_graph();
    let kinds: Vec<Option<Branch>> = if per_branch { Branch::ALL.map(Some).to_vec() } else { vec![None] };
    let jobs: Vec<(String, String, Option<Branch>)> = index
        .iter()
        .flat_map(|e| kinds.iter().map(|&b| (e.stem.clone(), adjacency_key(&e.stem, b), b)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|(stem, key, branch)| {
            let x = load_kind(cache, stem, branch.map_or("raw", |b| b.name()))?;
            Ok((key.clone(), sample_adjacency(&x, &graph, dtw)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut off: Vec<f64> = entries.iter().flat_map(|(_, a)| a.edge_entries(graph.edge_nodes())).collect();
    off.sort_by(f64::total_cmp);
    let summary = AdjacencySummary {
        entries: entries.len(),
        min_off_diagonal: off.first().copied().unwrap_or(f64::NAN),
        median_off_diagonal: off.get(off.len() / 2).copied().unwrap_or(f64::NAN),
    };
    Ok((AdjacencyCache { entries }, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitKind {
    /// Cross-subject benchmark subjects.
    Xsub,
    /// Cross-view benchmark cameras.
    Xview,
    /// Every sample in both sets.
    None,
}

/// Indices of training and evaluation samples.
pub fn split_indices(index: &[IndexEntry], split: SplitKind) -> (Vec<usize>, Vec<usize>) {
    let rule = match split {
        SplitKind::Xsub => SplitRule::ntu_cross_subject(),
        SplitKind::Xview => SplitRule::ntu_cross_view(),
        SplitKind::None => return ((0..index.len()).collect(), (0..index.len()).collect()),
    };
    let manifest = DatasetManifest {
        entries: index
            .iter()
            .map(|e| ManifestEntry {
                path: PathBuf::from(&e.stem),
                label: e.label,
                subject_id: e.subject_id,
                camera_id: e.camera_id,
            })
            .collect(),
    };
    manifest.split(&rule)
}
