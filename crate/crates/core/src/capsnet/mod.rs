// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! LSTM-CapsNet assembly: stacked LSTM with layer norm, two convolutions
//! that form lower capsules, and routing-by-agreement to higher capsules.

mod model;
mod routing;
mod spec;

pub use model::{forward, predict_classes, BoundModel, ForwardOutput, LayerNormParams, ModelParams, RegressionHeadParams};
pub use routing::{dynamic_routing, predict_vectors, route, Routing, RoutingResult};
pub use spec::{ArchSpec, Head, DEFAULT_ROUTING_ITERS, REGRESSION_HIDDEN, STUDENT_LADDER};

use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CapsError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("architecture mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("architecture block: {0}")]
    Json(#[from] serde_json::Error),
}
