//! Small from-scratch network library: dense layers, a gated recurrent
//! cell, the branching Q-network, an Adam optimizer and a binary checkpoint
//! container.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod network;

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, TrainingState, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, TrialResult, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use layers::{init_limit, Activation, CellTrace, DenseLayer, RecurrentCell};
pub use network::{
    backward, copy_params, forward, forward_step, NetworkParams, Query, StepInput, StepOutput, StepTrace, Topology,
    BRANCHES, CHOICES, Q_WIDTH,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid topology ({0})")]
    InvalidTopology(Topology),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("topology mismatch: checkpoint has {found}, expected {expected}")]
    TopologyMismatch { expected: Topology, found: Topology },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
