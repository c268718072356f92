use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Training subjects of the NTU RGB+D cross-subject benchmark.
pub const NTU_XSUB_TRAIN_SUBJECTS: [u32; 20] =
    [1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject_id: u32,
    pub camera_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitRule {
    /// Entries whose subject is listed go to training.
    BySubject(Vec<u32>),
    /// Entries whose camera is listed go to training.
    ByCamera(Vec<u32>),
    /// Entries whose path is listed go to training.
    Explicit(BTreeSet<PathBuf>),
}

impl SplitRule {
    pub fn ntu_cross_subject() -> Self {
        SplitRule::BySubject(NTU_XSUB_TRAIN_SUBJECTS.to_vec())
    }

    pub fn ntu_cross_view() -> Self {
        SplitRule::ByCamera(vec![2, 3])
    }

    fn is_train(&self, entry: &ManifestEntry) -> bool {
        match self {
            SplitRule::BySubject(s) => s.contains(&entry.subject_id),
            SplitRule::ByCamera(c) => c.contains(&entry.camera_id),
            SplitRule::Explicit(paths) => paths.contains(&entry.path),
        }
    }
}

/// Tab-separated `path label subject camera` records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate path {}",
                    e.path.display()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::InvalidManifest(format!("line {}: {what}", idx + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, subject, camera] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                label: label.trim().parse().map_err(|_| bad("bad label"))?,
                subject_id: subject.trim().parse().map_err(|_| bad("bad subject id"))?,
                camera_id: camera.trim().parse().map_err(|_| bad("bad camera id"))?,
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.path.display(),
                e.label,
                e.subject_id,
                e.camera_id
            );
        }
        out
    }

    /// Number of classes implied by the largest label.
    pub fn class_count(&self) -> usize {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.label >= classes) {
            Some(e) => Err(Error::LabelOutOfRange { label: e.label, classes }),
            None => Ok(()),
        }
    }

    /// Indices of training and evaluation entries, in manifest order.
    pub fn split(&self, rule: &SplitRule) -> (Vec<usize>, Vec<usize>) {
        (0..self.entries.len()).partition(|&i| rule.is_train(&self.entries[i]))
    }
}
