//! Dense `(C, T, V, M)` feature tensors shared by ingestion, preprocessing and the network.

use ndarray::Array4;

use crate::error::{Error, Result};

/// What the channel axis of a [`FeatureTensor`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSemantics {
    Raw3d,
    Joint6,
    Velocity6,
    Bone6,
    Hidden,
}

impl ChannelSemantics {
    /// Required channel count, or `None` for hidden features of any width.
    pub fn channels(self) -> Option<usize> {
        match self {
            ChannelSemantics::Raw3d => Some(3),
            ChannelSemantics::Joint6 | ChannelSemantics::Velocity6 | ChannelSemantics::Bone6 => {
                Some(6)
            }
            ChannelSemantics::Hidden => None,
        }
    }

    pub fn code(self) -> u64 {
        match self {
            ChannelSemantics::Raw3d => 0,
            ChannelSemantics::Joint6 => 1,
            ChannelSemantics::Velocity6 => 2,
            ChannelSemantics::Bone6 => 3,
            ChannelSemantics::Hidden => 4,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => ChannelSemantics::Raw3d,
            1 => ChannelSemantics::Joint6,
            2 => ChannelSemantics::Velocity6,
            3 => ChannelSemantics::Bone6,
            4 => ChannelSemantics::Hidden,
            _ => return None,
        })
    }
}

/// A finite rank-4 array laid out as (channels, frames, joints, bodies).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array4<f64>,
    semantics: ChannelSemantics,
}

impl FeatureTensor {
    pub fn new(data: Array4<f64>, semantics: ChannelSemantics) -> Result<Self> {
        if let Some(c) = semantics.channels() {
            if data.shape()[0] != c {
                return Err(Error::ShapeMismatch(format!(
                    "{semantics:?} tensor needs {c} channels, got {}",
                    data.shape()[0]
                )));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(
                "feature tensor contains non-finite entries".into(),
            ));
        }
        Ok(Self { data, semantics })
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn semantics(&self) -> ChannelSemantics {
        self.semantics
    }

    /// `(C, T, V, M)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn bodies(&self) -> usize {
        self.data.shape()[3]
    }
}
