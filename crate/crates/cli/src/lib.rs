//! Command-line pipeline: phantom generation, training, assessment,
//! evaluation and report rendering.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod study;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("study: {0}")]
    Study(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Predictor(#[from] mammopos_predictor::PredictorError),
    #[error(transparent)]
    Decision(#[from] mammopos_core::decision::DecisionError),
    #[error(transparent)]
    Phantom(#[from] mammopos_core::phantom::PhantomError),
    #[error(transparent)]
    Geometry(#[from] mammopos_core::geometry::GeometryError),
    #[error(transparent)]
    Eval(#[from] mammopos_core::eval::EvalError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }
}
