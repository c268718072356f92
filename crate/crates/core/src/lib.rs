//! Spatial-structural graph convolution for skeleton-based action recognition.
//!
//! The pipeline runs from NTU-format skeleton files ([`skeleton_io`]) through the
//! joint/velocity/bone feature branches ([`preprocess`]), the fixed spatial topology
//! ([`graph`]) and the per-sample structural adjacency built from FastDTW distances
//! between edge-node trajectories ([`dtw`], [`struct_adj`]), into a two-branch graph
//! convolution network with exact reverse-mode gradients ([`nn`]) and its training
//! harness ([`train_eval`]).

pub mod dtw;
pub mod error;
pub mod feature;
pub mod graph;
pub mod nn;
pub mod preprocess;
pub mod skeleton_io;
pub mod struct_adj;
pub mod train_eval;

pub use error::{Error, Result};
pub use feature::{ChannelSemantics, FeatureTensor};
