use std::collections::HashMap;

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::feature::{ChannelSemantics, FeatureTensor};

pub const DEFAULT_BODY_CAPACITY: usize = 2;
pub const DEFAULT_TARGET_FRAMES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: u64,
    /// One `[x, y, z]` triple per joint, in meters.
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecord {
    pub bodies: Vec<Body>,
}

/// Per-frame, per-body joint coordinates of one recorded action.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<FrameRecord>,
    pub joint_count: usize,
    pub body_capacity: usize,
    pub label: Option<usize>,
    pub source_id: String,
}

impl SkeletonSequence {
    /// Checks the frame/body/joint invariants.
    pub fn validate(&self) -> Result<()> {
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.bodies.len() > self.body_capacity {
                return Err(Error::malformed(
                    0,
                    format!(
                        "frame {f} holds {} bodies, capacity {}",
                        frame.bodies.len(),
                        self.body_capacity
                    ),
                ));
            }
            for (b, body) in frame.bodies.iter().enumerate() {
                if body.joints.len() != self.joint_count {
                    return Err(Error::malformed(
                        0,
                        format!(
                            "frame {f} body {b} has {} joints, expected {}",
                            body.joints.len(),
                            self.joint_count
                        ),
                    ));
                }
                for (j, p) in body.joints.iter().enumerate() {
                    if p.iter().any(|c| !c.is_finite()) {
                        return Err(Error::NonFiniteCoordinate { frame: f, body: b, joint: j });
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps only the `capacity` bodies with the highest motion energy.
    pub fn retain_most_active(&mut self, capacity: usize) {
        let ranked = rank_bodies(self);
        if ranked.len() > capacity {
            let keep: Vec<u64> = ranked[..capacity].to_vec();
            for frame in &mut self.frames {
                frame.bodies.retain(|b| keep.contains(&b.id));
            }
        }
        self.body_capacity = capacity;
    }
}

/// Sum of squared frame-to-frame joint displacement for every body id, over
/// consecutive frames in which the body is present.
pub fn body_motion_energy(seq: &SkeletonSequence) -> HashMap<u64, f64> {
    let mut energy = HashMap::new();
    let mut last: HashMap<u64, &Vec<[f64; 3]>> = HashMap::new();
    for frame in &seq.frames {
        let mut seen = HashMap::new();
        for body in &frame.bodies {
            let e = energy.entry(body.id).or_insert(0.0);
            if let Some(prev) = last.get(&body.id) {
                *e += prev
                    .iter()
                    .zip(&body.joints)
                    .map(|(p, q)| (0..3).map(|k| (q[k] - p[k]).powi(2)).sum::<f64>())
                    .sum::<f64>();
            }
            seen.insert(body.id, &body.joints);
        }
        last = seen;
    }
    energy
}

/// Body ids by descending motion energy, ties broken by first appearance.
fn rank_bodies(seq: &SkeletonSequence) -> Vec<u64> {
    let energy = body_motion_energy(seq);
    let mut order: Vec<u64> = Vec::new();
    for frame in &seq.frames {
        for body in &frame.bodies {
            if !order.contains(&body.id) {
                order.push(body.id);
            }
        }
    }
    // Stable sort keeps first-appearance order among equal energies.
    order.sort_by(|a, b| energy[b].total_cmp(&energy[a]));
    order
}

/// Resamples `seq` to `target_frames` and packs it as a raw `(3, T, V, M)` tensor.
///
/// Longer sequences are subsampled at frame `floor(i * len / target)`; shorter ones are
/// zero-padded at the tail. Body slot 0 holds the most active body.
pub fn to_tensor(seq: &SkeletonSequence, target_frames: usize) -> Result<FeatureTensor> {
    if target_frames == 0 {
        return Err(Error::ShapeMismatch("target_frames must be at least 1".into()));
    }
    if seq.frames.iter().all(|f| f.bodies.is_empty()) {
        return Err(Error::EmptySequence);
    }
    seq.validate()?;
    let capacity = seq.body_capacity;
    let slots: Vec<u64> = rank_bodies(seq).into_iter().take(capacity).collect();

    let len = seq.frames.len();
    let mut data = Array4::zeros((3, target_frames, seq.joint_count, capacity));
    for t in 0..target_frames.min(len) {
        let src = if len > target_frames { t * len / target_frames } else { t };
        for body in &seq.frames[src].bodies {
            let Some(slot) = slots.iter().position(|&id| id == body.id) else {
                continue;
            };
            for (v, p) in body.joints.iter().enumerate() {
                for c in 0..3 {
                    data[[c, t, v, slot]] = p[c];
                }
            }
        }
    }
    FeatureTensor::new(data, ChannelSemantics::Raw3d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(id: u64, joints: usize, f: impl Fn(usize) -> [f64; 3]) -> Body {
        Body { id, joints: (0..joints).map(f).collect() }
    }

    fn seq(frames: Vec<FrameRecord>) -> SkeletonSequence {
        SkeletonSequence {
            frames,
            joint_count: 25,
            body_capacity: 2,
            label: None,
            source_id: "t".into(),
        }
    }

    #[test]
    fn identity_resample_pads_missing_body() {
        let frames = (0..10)
            .map(|t| FrameRecord {
                bodies: vec![body(9, 25, |v| [t as f64, v as f64, 1.0])],
            })
            .collect();
        let x = to_tensor(&seq(frames), 10).unwrap();
        assert_eq!(x.dims(), (3, 10, 25, 2));
        assert!(x.data().index_axis(ndarray::Axis(3), 1).iter().all(|&v| v == 0.0));
        assert_eq!(x.data()[[0, 7, 3, 0]], 7.0);
    }

    #[test]
    fn uniform_stride_subsample() {
        let frames = (0..20)
            .map(|t| FrameRecord { bodies: vec![body(1, 25, |_| [t as f64, 0.0, 0.0])] })
            .collect();
        let x = to_tensor(&seq(frames), 10).unwrap();
        let picked: Vec<f64> = (0..10).map(|t| x.data()[[0, t, 0, 0]]).collect();
        assert_eq!(picked, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0]);
    }

    #[test]
    fn tail_padding_keeps_all_frames() {
        let frames = (0..4)
            .map(|t| FrameRecord { bodies: vec![body(1, 25, |_| [t as f64 + 1.0, 0.0, 0.0])] })
            .collect();
        let x = to_tensor(&seq(frames), 6).unwrap();
        let col: Vec<f64> = (0..6).map(|t| x.data()[[0, t, 0, 0]]).collect();
        assert_eq!(col, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn moving_body_takes_slot_zero() {
        // Body 5 (static) appears first, body 8 moves.
        let frames: Vec<FrameRecord> = (0..6)
            .map(|t| FrameRecord {
                bodies: vec![
                    body(5, 25, |_| [0.5, 0.5, 0.5]),
                    body(8, 25, |v| [0.1 * t as f64, v as f64 * 0.01, 2.0]),
                ],
            })
            .collect();
        let s = seq(frames);
        // Direct summation: 25 joints, 5 steps of 0.1 along x.
        let energy = body_motion_energy(&s);
        assert!((energy[&8] - 25.0 * 5.0 * 0.01).abs() < 1e-12);
        assert_eq!(energy[&5], 0.0);
        let x = to_tensor(&s, 6).unwrap();
        assert_eq!(x.data()[[2, 0, 0, 0]], 2.0);
        assert_eq!(x.data()[[2, 0, 0, 1]], 0.5);
    }

    #[test]
    fn empty_sequence_rejected() {
        let s = seq(vec![FrameRecord::default(); 3]);
        assert!(matches!(to_tensor(&s, 4), Err(Error::EmptySequence)));
    }

    #[test]
    fn retain_drops_least_active_bodies() {
        let frames: Vec<FrameRecord> = (0..3)
            .map(|t| FrameRecord {
                bodies: vec![
                    body(1, 25, |_| [0.0; 3]),
                    body(2, 25, |_| [t as f64, 0.0, 0.0]),
                    body(3, 25, |_| [0.0, 2.0 * t as f64, 0.0]),
                ],
            })
            .collect();
        let mut s = seq(frames);
        s.body_capacity = 3;
        s.retain_most_active(2);
        let ids: Vec<u64> = s.frames[0].bodies.iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![2, 3]);
        s.validate().unwrap();
    }
}
