// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Minimal reverse-mode differentiable tensor engine.
//!
//! Values are 64-bit floats throughout; 32-bit floats appear only at file
//! boundaries. Broadcasting is limited to scalar-tensor ops plus the explicit
//! row-bias add; everything else needs matching shapes.

mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod init;
mod lstm;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use lstm::{lstm_forward, LstmLayer, LstmVars};
pub use tensor::Tensor;

/// Default negative slope for LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
