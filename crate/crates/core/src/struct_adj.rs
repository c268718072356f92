//! Per-sample structural adjacency `As = I - D⁻¹` over the edge nodes, where `D`
//! holds pairwise FastDTW distances between edge-node trajectories.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::dtw::{fastdtw, Series, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::feature::FeatureTensor;
use crate::graph::GraphSpec;

/// Floor applied to distances before taking reciprocals.
pub const DEFAULT_EPSILON: f64 = 1e-6;

const CACHE_MAGIC: &[u8; 8] = b"SPSTADJ1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwConfig {
    pub radius: usize,
    /// Divide each FastDTW cost by its warp-path length.
    pub normalize: bool,
    pub epsilon: f64,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self { radius: DEFAULT_RADIUS, normalize: true, epsilon: DEFAULT_EPSILON }
    }
}

/// Symmetric `V × V` distances, nonzero only between distinct edge nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDistanceMatrix {
    pub distances: Array2<f64>,
    pub edge_nodes: Vec<usize>,
    /// Number of FastDTW evaluations performed to fill the matrix.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralAdjacency {
    pub matrix: Array2<f64>,
}

impl StructuralAdjacency {
    pub fn identity(joints: usize) -> Self {
        Self { matrix: Array2::eye(joints) }
    }

    pub fn joints(&self) -> usize {
        self.matrix.nrows()
    }

    /// Off-diagonal entries between distinct edge nodes (upper triangle).
    pub fn edge_entries(&self, edge_nodes: &[usize]) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, &a) in edge_nodes.iter().enumerate() {
            for &b in &edge_nodes[i + 1..] {
                out.push(self.matrix[[a, b]]);
            }
        }
        out
    }

    /// Unit diagonal, symmetric, and non-positive off-diagonals confined to edge-node pairs.
    pub fn check_invariants(&self, edge_nodes: &[usize]) -> std::result::Result<(), String> {
        let v = self.joints();
        for i in 0..v {
            if self.matrix[[i, i]] != 1.0 {
                return Err(format!("diagonal ({i},{i}) = {}", self.matrix[[i, i]]));
            }
            for j in 0..v {
                let value = self.matrix[[i, j]];
                if !value.is_finite() {
                    return Err(format!("non-finite entry ({i},{j})"));
                }
                if value != self.matrix[[j, i]] {
                    return Err(format!("asymmetric at ({i},{j})"));
                }
                if i != j {
                    let edge_pair = edge_nodes.contains(&i) && edge_nodes.contains(&j);
                    if value > 0.0 || (!edge_pair && value != 0.0) {
                        return Err(format!("bad off-diagonal ({i},{j}) = {value}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn node_series(x: &FeatureTensor, joint: usize) -> Result<Series> {
    let view = x.data().slice(s![.., .., joint, 0]);
    // (C, T) -> row-major (T, C)
    let points = view.t().iter().copied().collect();
    Series::new(points, x.channels())
}

/// Pairwise FastDTW distances between the edge-node trajectories of body slot 0.
///
/// Each unordered pair is evaluated once and mirrored.
pub fn edge_distance_matrix(
    x: &FeatureTensor,
    graph: &GraphSpec,
    cfg: &DtwConfig,
) -> Result<EdgeDistanceMatrix> {
    let (_, _, v, m) = x.dims();
    if v != graph.joint_count() || m == 0 {
        return Err(Error::ShapeMismatch(format!(
            "tensor with {v} joints and {m} bodies does not match a {}-joint graph",
            graph.joint_count()
        )));
    }
    let edge = graph.edge_nodes();
    let series: Vec<Series> = edge.iter().map(|&j| node_series(x, j)).collect::<Result<_>>()?;
    let mut distances = Array2::zeros((v, v));
    let mut done = Array2::from_elem((v, v), false);
    let mut evaluations = 0;
    for (ia, &a) in edge.iter().enumerate() {
        for (ib, &b) in edge.iter().enumerate() {
            if a == b || done[[a, b]] {
                continue;
            }
            let warp = fastdtw(&series[ia], &series[ib], cfg.radius)?;
            evaluations += 1;
            let d = if cfg.normalize { warp.normalized_cost() } else { warp.total_cost };
            distances[[a, b]] = d;
            distances[[b, a]] = d;
            done[[a, b]] = true;
            done[[b, a]] = true;
        }
    }
    Ok(EdgeDistanceMatrix { distances, edge_nodes: edge.to_vec(), evaluations })
}

/// `I - D⁻¹`, with `D⁻¹` the element-wise reciprocal over distinct edge-node pairs and
/// each distance floored at `epsilon`.
pub fn structural_adjacency(d: &EdgeDistanceMatrix, epsilon: f64) -> StructuralAdjacency {
    let v = d.distances.nrows();
    let mut matrix = Array2::eye(v);
    for &a in &d.edge_nodes {
        for &b in &d.edge_nodes {
            if a != b {
                matrix[[a, b]] = -1.0 / d.distances[[a, b]].max(epsilon);
            }
        }
    }
    StructuralAdjacency { matrix }
}

/// Full per-sample pipeline on one tensor.
pub fn sample_adjacency(
    x: &FeatureTensor,
    graph: &GraphSpec,
    cfg: &DtwConfig,
) -> Result<StructuralAdjacency> {
    Ok(structural_adjacency(&edge_distance_matrix(x, graph, cfg)?, cfg.epsilon))
}

/// Adjacency for every sample, computed in parallel on the current rayon pool.
/// Output order matches input order.
pub fn dataset_adjacency(
    samples: &[FeatureTensor],
    graph: &GraphSpec,
    cfg: &DtwConfig,
) -> Result<Vec<StructuralAdjacency>> {
    samples.par_iter().map(|x| sample_adjacency(x, graph, cfg)).collect()
}

/// Keyed collection of per-sample adjacency matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyCache {
    pub entries: Vec<(String, StructuralAdjacency)>,
}

impl AdjacencyCache {
    pub fn get(&self, key: &str) -> Option<&StructuralAdjacency> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, a)| a)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Layout: magic, `V` and entry count (u64 LE), then per entry a u32 LE key length,
    /// UTF-8 key, and `V·V` little-endian `f64` in row-major order.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        let v = self.entries.first().map_or(0, |(_, a)| a.joints());
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&(v as u64).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (key, adj) in &self.entries {
            out.write_all(&(key.len() as u32).to_le_bytes())?;
            out.write_all(key.as_bytes())?;
            for value in adj.matrix.iter() {
                out.write_all(&value.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(mut input: impl Read, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::BadBinary { path: path.to_path_buf(), reason: reason.into() };
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let slice = bytes.get(cursor..cursor + n).ok_or_else(|| bad("truncated"))?;
            cursor += n;
            Ok(slice)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(bad("missing adjacency-cache header"));
        }
        let v = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let key = std::str::from_utf8(take(len)?).map_err(|_| bad("key is not UTF-8"))?.to_string();
            let raw = take(v * v * 8)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let matrix = Array2::from_shape_vec((v, v), values).map_err(|_| bad("bad shape"))?;
            entries.push((key, StructuralAdjacency { matrix }));
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), path)
    }
}
