//! Skeleton ingestion: NTU `.skeleton` files, dataset manifests, conversion to
//! [`FeatureTensor`](crate::FeatureTensor), and a synthetic motion generator.

mod manifest;
mod ntu;
mod sequence;
mod synthetic;

pub use manifest::{DatasetManifest, ManifestEntry, SplitRule, NTU_XSUB_TRAIN_SUBJECTS};
pub use ntu::{parse_ntu_skeleton_file, write_ntu_skeleton_file};
pub use sequence::{
    body_motion_energy, to_tensor, Body, FrameRecord, SkeletonSequence, DEFAULT_BODY_CAPACITY,
    DEFAULT_TARGET_FRAMES,
};
pub use synthetic::{
    generate_synthetic_dataset, generate_synthetic_sequences, MotionClass, SyntheticDataset,
    SyntheticSpec,
};
