//! Learned PEC/PNL endpoint regression for MLO views.
//!
//! * [`loss`] – Log-Cosh loss and its gradient.
//! * [`net`] – the convolutional regressor and its backward pass.
//! * [`train`] – mini-batch Adam training with best-validation checkpointing.
//! * [`predict`] – preprocessing, inference and the ground-truth passthrough.
//! * [`checkpoint`] – JSON model files.

pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod predict;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use loss::{log_cosh_loss, loss_gradient};
pub use mammopos_core::annotations::EndpointVector;
pub use net::{Architecture, Model};
pub use predict::{forward, passthrough_predictor, predict_lines};
pub use train::{train, History, TrainConfig};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("input must be {expected}x{expected} pixels, got {got} values")]
    InputShape { expected: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Annotation(#[from] mammopos_core::annotations::AnnotationError),
    #[error(transparent)]
    Geometry(#[from] mammopos_core::geometry::GeometryError),
    #[error(transparent)]
    Augment(#[from] mammopos_core::augmentation::AugmentError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}
