//! Skeleton topology and the hop-partitioned, degree-normalized spatial adjacency.

use std::collections::VecDeque;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Guard added to every degree before normalization.
pub const DEFAULT_ALPHA: f64 = 1e-3;
/// Largest hop distance given its own partition.
pub const DEFAULT_MAX_HOP: usize = 2;

/// NTU RGB+D 25-joint tree, 1-based joint labels as in the dataset documentation.
///
/// Joint 2 is the middle of the spine; 22/24 are the hand tips and 23/25 the thumbs,
/// all four hanging off the hand joints 8 and 12.
const NTU_EDGES_1BASED: [(usize, usize); 24] = [
    (1, 2),
    (2, 21),
    (3, 21),
    (4, 3),
    (5, 21),
    (6, 5),
    (7, 6),
    (8, 7),
    (9, 21),
    (10, 9),
    (11, 10),
    (12, 11),
    (13, 1),
    (14, 13),
    (15, 14),
    (16, 15),
    (17, 1),
    (18, 17),
    (19, 18),
    (20, 19),
    (22, 8),
    (23, 8),
    (24, 12),
    (25, 12),
];

/// 0-based NTU joint indices used throughout the crate.
pub mod ntu {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const LEFT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const LEFT_HAND: usize = 7;
    pub const RIGHT_SHOULDER: usize = 8;
    pub const RIGHT_ELBOW: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const RIGHT_HAND: usize = 11;
    pub const LEFT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const LEFT_ANKLE: usize = 14;
    pub const LEFT_FOOT: usize = 15;
    pub const RIGHT_HIP: usize = 16;
    pub const RIGHT_KNEE: usize = 17;
    pub const RIGHT_ANKLE: usize = 18;
    pub const RIGHT_FOOT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const LEFT_HAND_TIP: usize = 21;
    pub const LEFT_THUMB: usize = 22;
    pub const RIGHT_HAND_TIP: usize = 23;
    pub const RIGHT_THUMB: usize = 24;
    pub const JOINTS: usize = 25;
}

/// Skeleton tree with a designated center joint and the edge nodes that get structural links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSpec {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    center_joint: usize,
    edge_nodes: Vec<usize>,
    parent_map: Vec<usize>,
}

impl GraphSpec {
    /// Validates that `edges` form a spanning tree and every edge node is a leaf.
    pub fn new(
        joint_count: usize,
        edges: Vec<(usize, usize)>,
        center_joint: usize,
        mut edge_nodes: Vec<usize>,
    ) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::InvalidGraph("graph needs at least one joint".into()));
        }
        if center_joint >= joint_count {
            return Err(Error::InvalidGraph(format!(
                "center joint {center_joint} outside [0, {joint_count})"
            )));
        }
        if edges.len() + 1 != joint_count {
            return Err(Error::InvalidGraph(format!(
                "a tree over {joint_count} joints has {} edges, got {}",
                joint_count - 1,
                edges.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); joint_count];
        for &(a, b) in &edges {
            if a >= joint_count || b >= joint_count || a == b {
                return Err(Error::InvalidGraph(format!("bad edge ({a}, {b})")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let parent_map = bfs_parents(&neighbors, center_joint).ok_or_else(|| {
            Error::InvalidGraph("edges do not connect every joint".into())
        })?;

        edge_nodes.sort_unstable();
        edge_nodes.dedup();
        for &e in &edge_nodes {
            if e >= joint_count {
                return Err(Error::InvalidGraph(format!("edge node {e} out of range")));
            }
            if neighbors[e].len() != 1 {
                return Err(Error::InvalidGraph(format!(
                    "edge node {e} has degree {}, expected 1",
                    neighbors[e].len()
                )));
            }
        }

        Ok(Self { joint_count, edges, center_joint, edge_nodes, parent_map })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center_joint(&self) -> usize {
        self.center_joint
    }

    /// Sorted, deduplicated edge-node indices.
    pub fn edge_nodes(&self) -> &[usize] {
        &self.edge_nodes
    }

    /// Parent of each joint in the tree rooted at the center; the center is its own parent.
    pub fn parent_map(&self) -> &[usize] {
        &self.parent_map
    }

    pub fn degree(&self, joint: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == joint || b == joint).count()
    }

    pub fn with_edge_nodes(&self, edge_nodes: Vec<usize>) -> Result<Self> {
        Self::new(self.joint_count, self.edges.clone(), self.center_joint, edge_nodes)
    }

    /// All-pairs shortest-path hop distances.
    pub fn hop_distances(&self) -> Array2<usize> {
        let v = self.joint_count;
        let mut neighbors = vec![Vec::new(); v];
        for &(a, b) in &self.edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut dist = Array2::from_elem((v, v), usize::MAX);
        for src in 0..v {
            let mut queue = VecDeque::from([src]);
            dist[[src, src]] = 0;
            while let Some(u) = queue.pop_front() {
                let d = dist[[src, u]];
                for &w in &neighbors[u] {
                    if dist[[src, w]] == usize::MAX {
                        dist[[src, w]] = d + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        dist
    }

    /// Text form: `key = value` header lines followed by one `a b` edge per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "joints = {}", self.joint_count);
        let _ = writeln!(out, "center = {}", self.center_joint);
        let nodes: Vec<String> = self.edge_nodes.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "edge_nodes = {}", nodes.join(" "));
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut joints = None;
        let mut center = None;
        let mut edge_nodes = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::InvalidGraph(format!("line {}: {what}", lineno + 1));
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "joints" => joints = Some(value.parse().map_err(|_| bad("bad joint count"))?),
                    "center" => center = Some(value.parse().map_err(|_| bad("bad center"))?),
                    "edge_nodes" => {
                        edge_nodes = value
                            .split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse().map_err(|_| bad("bad edge node")))
                            .collect::<Result<_>>()?;
                    }
                    other => return Err(bad(&format!("unknown key `{other}`"))),
                }
            } else {
                let mut parts = line.split_whitespace();
                let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(bad("expected `a b` edge"));
                };
                edges.push((
                    a.parse().map_err(|_| bad("bad edge endpoint"))?,
                    b.parse().map_err(|_| bad("bad edge endpoint"))?,
                ));
            }
        }
        let joints = joints.ok_or_else(|| Error::InvalidGraph("missing `joints`".into()))?;
        let center = center.ok_or_else(|| Error::InvalidGraph("missing `center`".into()))?;
        Self::new(joints, edges, center, edge_nodes)
    }
}

fn bfs_parents(neighbors: &[Vec<usize>], root: usize) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; neighbors.len()];
    parent[root] = root;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &w in &neighbors[u] {
            if parent[w] == usize::MAX {
                parent[w] = u;
                queue.push_back(w);
            }
        }
    }
    parent.iter().all(|&p| p != usize::MAX).then_some(parent)
}

/// The 25-joint NTU RGB+D skeleton centered on the middle of the spine, with head,
/// both hand tips and both feet as edge nodes.
pub fn ntu_graph() -> GraphSpec {
    let edges = NTU_EDGES_1BASED.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
    GraphSpec::new(
        ntu::JOINTS,
        edges,
        ntu::SPINE_MID,
        vec![
            ntu::HEAD,
            ntu::LEFT_HAND_TIP,
            ntu::RIGHT_HAND_TIP,
            ntu::LEFT_FOOT,
            ntu::RIGHT_FOOT,
        ],
    )
    .expect("NTU topology is a valid tree")
}

/// One 0/1 matrix per hop distance `0..=max_hop`; entry `(u, v)` is set iff the
/// shortest path between `u` and `v` has exactly that many edges.
pub fn hop_partition(graph: &GraphSpec, max_hop: usize) -> Vec<Array2<f64>> {
    let dist = graph.hop_distances();
    (0..=max_hop)
        .map(|hop| dist.mapv(|d| if d == hop { 1.0 } else { 0.0 }))
        .collect()
}

/// Symmetric degree normalization `Λ^{-1/2} A Λ^{-1/2}` with `Λ_ii = Σ_k A_ik + alpha`.
///
/// Returns the normalized matrix together with the diagonal of `Λ`.
pub fn normalize(adjacency: &Array2<f64>, alpha: f64) -> (Array2<f64>, Array1<f64>) {
    let degree = adjacency.sum_axis(ndarray::Axis(1)) + alpha;
    let inv_sqrt = degree.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    let mut out = adjacency.clone();
    for ((i, j), value) in out.indexed_iter_mut() {
        *value *= inv_sqrt[i] * inv_sqrt[j];
    }
    (out, degree)
}

/// Normalized hop partitions used by the spatial branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAdjacency {
    pub normalized: Vec<Array2<f64>>,
    pub raw: Vec<Array2<f64>>,
    pub degrees: Vec<Array1<f64>>,
    pub max_hop: usize,
}

impl SpatialAdjacency {
    pub fn build(graph: &GraphSpec, max_hop: usize, alpha: f64) -> Self {
        let raw = hop_partition(graph, max_hop);
        let (normalized, degrees) = raw.iter().map(|a| normalize(a, alpha)).unzip();
        Self { normalized, raw, degrees, max_hop }
    }

    pub fn partitions(&self) -> usize {
        self.normalized.len()
    }

    pub fn joints(&self) -> usize {
        self.normalized.first().map_or(0, |a| a.nrows())
    }

    /// Partitions stacked as a `(K, V, V)` array.
    pub fn stacked(&self) -> ndarray::Array3<f64> {
        let (k, v) = (self.partitions(), self.joints());
        let mut out = ndarray::Array3::zeros((k, v, v));
        for (idx, a) in self.normalized.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), idx).assign(a);
        }
        out
    }
}

impl Default for SpatialAdjacency {
    fn default() -> Self {
        Self::build(&ntu_graph(), DEFAULT_MAX_HOP, DEFAULT_ALPHA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> GraphSpec {
        GraphSpec::new(3, vec![(0, 1), (1, 2)], 1, vec![0, 2]).unwrap()
    }

    #[test]
    fn ntu_tree_shape() {
        let g = ntu_graph();
        assert_eq!(g.joint_count(), 25);
        assert_eq!(g.edges().len(), 24);
        assert_eq!(g.edge_nodes().len(), 5);
        for &e in g.edge_nodes() {
            assert_eq!(g.degree(e), 1, "edge node {e}");
        }
        // Thumbs are leaves too but are not edge nodes by default.
        assert_eq!(g.degree(ntu::LEFT_THUMB), 1);
        assert!(!g.edge_nodes().contains(&ntu::LEFT_THUMB));
        assert_eq!(g.parent_map()[ntu::SPINE_MID], ntu::SPINE_MID);
        assert_eq!(g.parent_map()[ntu::HEAD], ntu::NECK);
        assert!(g.hop_distances().iter().all(|&d| d < 25));
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(GraphSpec::new(3, vec![(0, 1)], 0, vec![]).is_err());
        assert!(GraphSpec::new(4, vec![(0, 1), (1, 0), (2, 3)], 0, vec![]).is_err());
        assert!(GraphSpec::new(3, vec![(0, 1), (1, 2)], 3, vec![]).is_err());
        // Joint 1 has degree 2.
        assert!(GraphSpec::new(3, vec![(0, 1), (1, 2)], 0, vec![1]).is_err());
    }

    #[test]
    fn hop_zero_is_identity() {
        let parts = hop_partition(&ntu_graph(), 0);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], Array2::<f64>::eye(25));
    }

    #[test]
    fn path_graph_two_hop() {
        let parts = hop_partition(&path3(), 2);
        let two = &parts[2];
        let set: Vec<_> = two.indexed_iter().filter(|(_, &v)| v == 1.0).map(|(ix, _)| ix).collect();
        assert_eq!(set, vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn normalize_identity_and_single_edge() {
        let (n, _) = normalize(&Array2::eye(4), 1e-3);
        for ((i, j), &v) in n.indexed_iter() {
            let expected = if i == j { 1.0 / 1.001 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15);
        }
        let edge = ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let (n, deg) = normalize(&edge, 0.0);
        assert_eq!(n, edge);
        assert_eq!(deg.to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn text_round_trip() {
        let g = ntu_graph();
        assert_eq!(GraphSpec::from_text(&g.to_text()).unwrap(), g);
        assert!(GraphSpec::from_text("joints = 2\ncenter = 0\nfoo = 1\n0 1\n").is_err());
    }
}
