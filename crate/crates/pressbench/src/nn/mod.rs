//! Minimal differentiable-computation substrate.
//!
//! A fixed layer vocabulary (affine, conv2d, relu, gelu, layer-norm,
//! positional add, attention block, tokens/flatten/mean-pool) with
//! reverse-mode gradients, Adam, a warmup-cosine schedule, and a binary
//! checkpoint container. Training is single-threaded and bit-deterministic
//! given a seed.

pub mod checkpoint;
pub mod fastmath;
pub mod layers;
pub mod linalg;
pub mod module;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{concat, softmax, split_grad, Layer, TransformerBlock};
pub use module::{Module, Tape};
pub use optim::{AdamState, LrSchedule};
pub use tensor::Tensor;
pub use train::{loss_and_grad, train_epochs, LossKind, LrPlan, Target, TrainConfig, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}
