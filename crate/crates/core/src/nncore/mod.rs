//! Tensors, reverse-mode autodiff, the 1-D conv backbone, optimizers, and
//! learning-rate schedules.
//!
//! The engine is deliberately small: a session records the forward ops the
//! pipeline actually uses (conv1d, ReLU, max pooling, dense layers, the two
//! loss heads) and replays them in reverse for gradients. Everything is
//! f64; training batches at desk scale fit comfortably.

mod checkpoint;
mod gradcheck;
mod graph;
mod model;
mod optim;
mod schedule;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckConfig};
pub use graph::{GradStore, NodeId, Session};
pub use model::{
    backbone_forward, build_backbone, build_head, build_projection, embed_windows,
    init_backbone_params, init_head_params, init_projection_params, softmax, windows_to_tensor,
    BackboneConfig,
};
pub use optim::{Adam, EarlyStop, EarlyStopper, Lars};
pub use schedule::{lr_at, ScheduleConfig};
pub use tensor::{ParameterSet, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("step {step} out of range (total {total})")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
