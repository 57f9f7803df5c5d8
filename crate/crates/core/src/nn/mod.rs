//! Dense tensors and a small hand-written CNN: layer kernels with exact
//! gradients, the model container, Adam, and checkpoint I/O.

mod checkpoint;
pub mod layers;
mod model;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION};
pub use model::{
    default_architecture, ForwardPass, Gradients, Layer, LayerSpec, Model, ParamGrads,
    DIGIT_LABELS, INPUT_SHAPE,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
}
