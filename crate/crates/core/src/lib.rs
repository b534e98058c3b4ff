//! Human motion prediction with a Temporal Inception Module encoder and a
//! graph convolutional network with learnable adjacency.
//!
//! Trajectories are `K × time` matrices (one row per joint coordinate,
//! oldest frame first). The model embeds every row with the [`tim`] module,
//! regresses residual motion with the [`gcn`], and adds the last observed
//! pose back to every output frame.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gcn;
pub mod linalg;
pub mod model;
pub mod tim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{HorizonSet, MotionSequence, SineComponent, SynthSpec};
pub use error::{Error, Result};
pub use gcn::{GcnConfig, GcnLayerParams, GcnParams};
pub use linalg::Matrix;
pub use model::{predict, GradBundle, ModelConfig, MotionModel};
pub use tim::{embedding_dim, BranchSpec, KernelSpec, TimConfig, TimParams};
pub use trainer::{EpochRecord, GradCheckReport, OptState, TrainConfig, TrainOutcome, TrainWindow};
