//! Joint, velocity and bone input features computed from raw 3D coordinates.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array4};

use crate::error::{Error, Result};
use crate::feature::{ChannelSemantics, FeatureTensor};
use crate::graph::GraphSpec;

/// Minimum bone length used as the direction-cosine denominator.
pub const BONE_EPSILON: f64 = 1e-8;

const CACHE_MAGIC: &[u8; 8] = b"SPSTFEAT";

/// The three per-sample network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub joint: FeatureTensor,
    pub velocity: FeatureTensor,
    pub bone: FeatureTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Joint,
    Velocity,
    Bone,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Joint, Branch::Velocity, Branch::Bone];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Joint => "joint",
            Branch::Velocity => "velocity",
            Branch::Bone => "bone",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl BranchSet {
    pub fn get(&self, branch: Branch) -> &FeatureTensor {
        match branch {
            Branch::Joint => &self.joint,
            Branch::Velocity => &self.velocity,
            Branch::Bone => &self.bone,
        }
    }
}

fn require_raw(x: &FeatureTensor) -> Result<()> {
    if x.semantics() != ChannelSemantics::Raw3d {
        return Err(Error::ShapeMismatch(format!(
            "expected raw 3D coordinates, got {:?}",
            x.semantics()
        )));
    }
    Ok(())
}

/// Raw coordinates followed by positions relative to `center_joint`.
pub fn joint_branch(x: &FeatureTensor, center_joint: usize) -> Result<FeatureTensor> {
    require_raw(x)?;
    let (_, t, v, m) = x.dims();
    if center_joint >= v {
        return Err(Error::ShapeMismatch(format!("center joint {center_joint} outside [0, {v})")));
    }
    let raw = x.data();
    let mut out = Array4::zeros((6, t, v, m));
    out.slice_mut(s![0..3, .., .., ..]).assign(raw);
    let center = raw.slice(s![.., .., center_joint..center_joint + 1, ..]);
    let mut rel = out.slice_mut(s![3..6, .., .., ..]);
    rel.assign(&(raw - &center));
    // Exact zero at the center, independent of rounding.
    rel.slice_mut(s![.., .., center_joint, ..]).fill(0.0);
    FeatureTensor::new(out, ChannelSemantics::Joint6)
}

/// One-frame and two-frame forward differences, zero-padded at the tail.
pub fn velocity_branch(x: &FeatureTensor) -> Result<FeatureTensor> {
    require_raw(x)?;
    let (_, t, v, m) = x.dims();
    if t < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: t });
    }
    let raw = x.data();
    let mut out = Array4::zeros((6, t, v, m));
    let slow = &raw.slice(s![.., 1.., .., ..]) - &raw.slice(s![.., ..t - 1, .., ..]);
    out.slice_mut(s![0..3, ..t - 1, .., ..]).assign(&slow);
    let fast = &raw.slice(s![.., 2.., .., ..]) - &raw.slice(s![.., ..t - 2, .., ..]);
    out.slice_mut(s![3..6, ..t - 2, .., ..]).assign(&fast);
    FeatureTensor::new(out, ChannelSemantics::Velocity6)
}

/// Bone vectors to each joint's parent followed by their three direction angles in radians.
pub fn bone_branch(x: &FeatureTensor, graph: &GraphSpec) -> Result<FeatureTensor> {
    require_raw(x)?;
    let (_, t, v, m) = x.dims();
    if graph.joint_count() != v {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} joints, tensor has {v}",
            graph.joint_count()
        )));
    }
    let raw = x.data();
    let parents = graph.parent_map();
    let mut out = Array4::zeros((6, t, v, m));
    for ti in 0..t {
        for (vi, &parent) in parents.iter().enumerate() {
            for mi in 0..m {
                let bone: [f64; 3] =
                    std::array::from_fn(|c| raw[[c, ti, vi, mi]] - raw[[c, ti, parent, mi]]);
                let norm = bone.iter().map(|b| b * b).sum::<f64>().sqrt().max(BONE_EPSILON);
                for c in 0..3 {
                    out[[c, ti, vi, mi]] = bone[c];
                    out[[c + 3, ti, vi, mi]] = (bone[c] / norm).clamp(-1.0, 1.0).acos();
                }
            }
        }
    }
    FeatureTensor::new(out, ChannelSemantics::Bone6)
}

pub fn preprocess_all(x: &FeatureTensor, graph: &GraphSpec) -> Result<BranchSet> {
    Ok(BranchSet {
        joint: joint_branch(x, graph.center_joint())?,
        velocity: velocity_branch(x)?,
        bone: bone_branch(x, graph)?,
    })
}

/// Raw coordinates recovered from the first three channels of a joint-branch tensor.
pub fn raw_from_joint(joint: &FeatureTensor) -> Result<FeatureTensor> {
    if joint.semantics() != ChannelSemantics::Joint6 {
        return Err(Error::ShapeMismatch("expected a joint-branch tensor".into()));
    }
    FeatureTensor::new(
        joint.data().slice(s![0..3, .., .., ..]).to_owned(),
        ChannelSemantics::Raw3d,
    )
}

/// Writes a tensor as `magic, semantics, C, T, V, M` (u64 LE) followed by the
/// row-major entries as little-endian `f64`.
pub fn write_feature_tensor(mut out: impl Write, x: &FeatureTensor) -> std::io::Result<()> {
    let (c, t, v, m) = x.dims();
    out.write_all(CACHE_MAGIC)?;
    for dim in [x.semantics().code(), c as u64, t as u64, v as u64, m as u64] {
        out.write_all(&dim.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(x.data().len() * 8);
    for value in x.data().iter() {
        buf.extend_from_slice(&value.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_feature_tensor(mut input: impl Read, path: &Path) -> Result<FeatureTensor> {
    let bad = |reason: &str| Error::BadBinary { path: path.to_path_buf(), reason: reason.into() };
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 48 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("missing feature-cache header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let semantics = ChannelSemantics::from_code(word(0)).ok_or_else(|| bad("unknown semantics"))?;
    let dims = [word(1), word(2), word(3), word(4)].map(|d| d as usize);
    let count: usize = dims.iter().product();
    let body = &bytes[48..];
    if body.len() != count * 8 {
        return Err(bad("payload length disagrees with header"));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let data = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), values)
        .map_err(|_| bad("bad shape"))?;
    FeatureTensor::new(data, semantics)
}

pub fn save_feature_tensor(path: &Path, x: &FeatureTensor) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_feature_tensor(&mut w, x).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_feature_tensor(path: &Path) -> Result<FeatureTensor> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_tensor(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ntu, ntu_graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_raw(t: usize, seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array4::from_shape_fn((3, t, 25, 2), |_| rng.gen_range(-1.0..1.0));
        FeatureTensor::new(data, ChannelSemantics::Raw3d).unwrap()
    }

    #[test]
    fn joint_center_is_zero() {
        let x = random_raw(5, 1);
        let j = joint_branch(&x, ntu::SPINE_MID).unwrap();
        assert!(j.data().slice(s![3..6, .., ntu::SPINE_MID, ..]).iter().all(|&v| v == 0.0));
        assert_eq!(j.data().slice(s![0..3, .., .., ..]), x.data());
    }

    #[test]
    fn joint_translation_offset() {
        let mut data = Array4::zeros((3, 4, 25, 1));
        for t in 0..4 {
            for (c, d) in [1.0, 2.0, 3.0].into_iter().enumerate() {
                data[[c, t, 1, 0]] = 0.5 * t as f64;
                data[[c, t, 5, 0]] = 0.5 * t as f64 + d;
            }
        }
        let x = FeatureTensor::new(data, ChannelSemantics::Raw3d).unwrap();
        let j = joint_branch(&x, 1).unwrap();
        for t in 0..4 {
            assert_eq!(
                [j.data()[[3, t, 5, 0]], j.data()[[4, t, 5, 0]], j.data()[[5, t, 5, 0]]],
                [1.0, 2.0, 3.0]
            );
        }
    }

    #[test]
    fn degenerate_pose_relative_zero() {
        let x = FeatureTensor::new(Array4::from_elem((3, 3, 25, 1), 0.7), ChannelSemantics::Raw3d)
            .unwrap();
        let j = joint_branch(&x, 1).unwrap();
        assert!(j.data().slice(s![3..6, .., .., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_linear_motion() {
        let data = Array4::from_shape_fn((3, 6, 25, 1), |(c, t, _, _)| if c == 0 { t as f64 } else { 0.0 });
        let x = FeatureTensor::new(data, ChannelSemantics::Raw3d).unwrap();
        let v = velocity_branch(&x).unwrap();
        for t in 0..6 {
            let slow = v.data()[[0, t, 3, 0]];
            let fast = v.data()[[3, t, 3, 0]];
            assert_eq!(slow, if t < 5 { 1.0 } else { 0.0 });
            assert_eq!(fast, if t < 4 { 2.0 } else { 0.0 });
            assert_eq!(v.data()[[1, t, 3, 0]], 0.0);
        }
    }

    #[test]
    fn velocity_telescopes() {
        let x = random_raw(7, 3);
        let v = velocity_branch(&x).unwrap();
        let d = v.data();
        for c in 0..3 {
            for t in 0..5 {
                for j in 0..25 {
                    let lhs = d[[c + 3, t, j, 0]];
                    let rhs = d[[c, t, j, 0]] + d[[c, t + 1, j, 0]];
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn velocity_needs_three_frames() {
        assert!(matches!(
            velocity_branch(&random_raw(2, 0)),
            Err(Error::SequenceTooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn bone_axis_aligned_and_self_parent() {
        let g = ntu_graph();
        let mut data = Array4::zeros((3, 3, 25, 1));
        // Head one unit along +x from the neck, every frame.
        for t in 0..3 {
            data[[0, t, ntu::HEAD, 0]] = 1.0;
        }
        let x = FeatureTensor::new(data, ChannelSemantics::Raw3d).unwrap();
        let b = bone_branch(&x, &g).unwrap();
        let angles = |j: usize| [3, 4, 5].map(|c| b.data()[[c, 0, j, 0]]);
        assert_eq!(angles(ntu::HEAD), [0.0, FRAC_PI_2, FRAC_PI_2]);
        assert_eq!(angles(ntu::SPINE_MID), [FRAC_PI_2; 3]);
        assert_eq!(b.data()[[0, 0, ntu::HEAD, 0]], 1.0);
    }

    #[test]
    fn preprocess_shapes() {
        let x = random_raw(64, 5);
        let set = preprocess_all(&x, &ntu_graph()).unwrap();
        for branch in Branch::ALL {
            assert_eq!(set.get(branch).dims(), (6, 64, 25, 2));
        }
        assert_eq!(raw_from_joint(&set.joint).unwrap(), x);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let x = velocity_branch(&random_raw(4, 9)).unwrap();
        let mut buf = Vec::new();
        write_feature_tensor(&mut buf, &x).unwrap();
        let p = Path::new("mem");
        assert_eq!(read_feature_tensor(&buf[..], p).unwrap(), x);
        assert!(read_feature_tensor(&buf[..buf.len() - 8], p).is_err());
        buf[0] = b'X';
        assert!(read_feature_tensor(&buf[..], p).is_err());
    }
}
