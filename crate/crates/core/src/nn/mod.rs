//! Differentiable core: a reverse-mode tape, the graph and temporal convolutions,
//! the SpSt-GCN block and model, checkpoints and gradient checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{check_gradients, run_check, CheckTarget, GradCheckReport};
pub use layers::{Mode, RunningStats, StructuralInput};
pub use model::{batch_adjacency, batch_input, edge_node_similarity, ChannelPlan, ForwardPass, Model, ModelConfig, ParamStore, RunMode, Stage};
pub use tape::{DiffTensor, Gradients, Role, Tape, Var};
