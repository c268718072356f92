use std::fmt::Write as _;

use super::sequence::{Body, FrameRecord, SkeletonSequence};
use crate::error::{Error, Result};

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next non-blank line as `(1-based line number, tokens)`.
    fn next_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        for (idx, line) in self.inner.by_ref() {
            self.last = idx + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Ok((idx + 1, tokens));
            }
        }
        Err(Error::malformed(self.last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn next_count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, tokens) = self.next_tokens(what)?;
        let count = tokens[0]
            .parse()
            .map_err(|_| Error::malformed(line, format!("expected {what}, found `{}`", tokens[0])))?;
        Ok((line, count))
    }

    fn rest_is_blank(&mut self) -> Option<usize> {
        self.inner
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .map(|(idx, _)| idx + 1)
    }
}

/// Parses the text layout of an NTU RGB+D `.skeleton` file.
///
/// Only the body id and the 3D joint coordinates are kept. When a file tracks more
/// than `body_capacity` bodies, the most active ones are retained.
pub fn parse_ntu_skeleton_file(
    text: &str,
    source_id: &str,
    body_capacity: usize,
) -> Result<SkeletonSequence> {
    let mut lines = Lines::new(text);
    let (_, frame_count) = lines.next_count("frame count")?;
    let mut frames = Vec::with_capacity(frame_count);
    let mut joint_count: Option<usize> = None;
    let mut max_bodies = 0;

    for f in 0..frame_count {
        let (_, body_count) = lines.next_count("body count")?;
        max_bodies = max_bodies.max(body_count);
        let mut bodies = Vec::with_capacity(body_count);
        for b in 0..body_count {
            let (line, header) = lines.next_tokens("body header")?;
            let id: u64 = header[0]
                .parse()
                .map_err(|_| Error::malformed(line, format!("bad body id `{}`", header[0])))?;
            let (jline, joints_here) = lines.next_count("joint count")?;
            match joint_count {
                None => joint_count = Some(joints_here),
                Some(j) if j != joints_here => {
                    return Err(Error::malformed(
                        jline,
                        format!("joint count {joints_here} differs from earlier {j}"),
                    ))
                }
                Some(_) => {}
            }
            let mut joints = Vec::with_capacity(joints_here);
            for j in 0..joints_here {
                let (line, fields) = lines.next_tokens("joint record")?;
                if fields.len() < 11 {
                    return Err(Error::malformed(
                        line,
                        format!("joint record has {} fields, expected at least 11", fields.len()),
                    ));
                }
                let mut p = [0.0f64; 3];
                for (k, slot) in p.iter_mut().enumerate() {
                    *slot = fields[k].parse().map_err(|_| {
                        Error::malformed(line, format!("bad coordinate `{}`", fields[k]))
                    })?;
                }
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFiniteCoordinate { frame: f, body: b, joint: j });
                }
                joints.push(p);
            }
            bodies.push(Body { id, joints });
        }
        frames.push(FrameRecord { bodies });
    }
    if let Some(line) = lines.rest_is_blank() {
        return Err(Error::malformed(
            line,
            format!("content continues past the declared {frame_count} frames"),
        ));
    }

    let mut seq = SkeletonSequence {
        frames,
        joint_count: joint_count.unwrap_or(crate::graph::ntu::JOINTS),
        body_capacity: max_bodies.max(body_capacity),
        label: None,
        source_id: source_id.to_string(),
    };
    seq.retain_most_active(body_capacity);
    Ok(seq)
}

/// Writes `seq` in the NTU text layout. Tracking and projection fields are zero.
pub fn write_ntu_skeleton_file(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seq.frames.len());
    for frame in &seq.frames {
        let _ = writeln!(out, "{}", frame.bodies.len());
        for body in &frame.bodies {
            let _ = writeln!(out, "{} 0 0 0 0 0 0 0 0 2", body.id);
            let _ = writeln!(out, "{}", body.joints.len());
            for p in &body.joints {
                // `{:?}` prints the shortest representation that round-trips exactly.
                let _ = writeln!(out, "{:?} {:?} {:?} 0 0 0 0 0 0 0 0 2", p[0], p[1], p[2]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(frames: usize, declared: usize) -> String {
        let mut s = format!("{declared}\n");
        for f in 0..frames {
            s.push_str("1\n72057594037931101 0 1 1 1 1 0 0.02 -0.3 2\n25\n");
            for j in 0..25 {
                let _ = writeln!(
                    s,
                    "{} {} {} 270.1 50.2 1000 500 0.1 0.2 0.3 0.9 2",
                    0.1 * j as f64,
                    -0.25 + f as f64,
                    3.125
                );
            }
        }
        s
    }

    #[test]
    fn parses_minimal_file() {
        let seq = parse_ntu_skeleton_file(&minimal(2, 2), "S001", 2).unwrap();
        assert_eq!(seq.frames.len(), 2);
        assert_eq!(seq.joint_count, 25);
        assert_eq!(seq.frames[1].bodies[0].id, 72057594037931101);
        assert_eq!(seq.frames[1].bodies[0].joints[3], [0.30000000000000004, 0.75, 3.125]);
        seq.validate().unwrap();
    }

    #[test]
    fn frame_count_mismatch() {
        let err = parse_ntu_skeleton_file(&minimal(2, 3), "x", 2).unwrap_err();
        assert!(matches!(err, Error::MalformedFile { .. }), "{err}");
        let err = parse_ntu_skeleton_file(&minimal(2, 1), "x", 2).unwrap_err();
        assert!(matches!(err, Error::MalformedFile { .. }), "{err}");
    }

    #[test]
    fn short_joint_record() {
        let text = "1\n1\n7 0 0 0 0 0 0 0 0 2\n1\n0.1 0.2 0.3\n";
        assert!(matches!(
            parse_ntu_skeleton_file(text, "x", 2),
            Err(Error::MalformedFile { line: 5, .. })
        ));
    }

    #[test]
    fn nan_coordinate() {
        let text = "1\n1\n7 0 0 0 0 0 0 0 0 2\n1\nnan 0.2 0.3 0 0 0 0 0 0 0 0 2\n";
        assert!(matches!(
            parse_ntu_skeleton_file(text, "x", 2),
            Err(Error::NonFiniteCoordinate { frame: 0, body: 0, joint: 0 })
        ));
    }

    #[test]
    fn writer_round_trip() {
        let seq = parse_ntu_skeleton_file(&minimal(3, 3), "a", 2).unwrap();
        let again = parse_ntu_skeleton_file(&write_ntu_skeleton_file(&seq), "a", 2).unwrap();
        assert_eq!(seq, again);
    }

    #[test]
    fn empty_frames_allowed() {
        let seq = parse_ntu_skeleton_file("2\n0\n0\n", "e", 2).unwrap();
        assert_eq!(seq.frames.len(), 2);
        assert!(seq.frames.iter().all(|f| f.bodies.is_empty()));
    }
}
