// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Capsule distillation losses, task losses, and their weighted combination.
//!
//! The total objective is
//! `eta * xi * L_U + alpha * L_V + (1 - alpha) * L_task`, where `L_U`
//! compares normalized lower-capsule Gram matrices, `L_V` is a softened KL
//! between higher-capsule lengths, and `L_task` is the margin loss
//! (classification) or squared error (regression). Every loss is averaged
//! over the batch.

mod losses;

pub use losses::*;

use serde::{Deserialize, Serialize};

use crate::capsnet::Head;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error("distillation weights are non-zero but teacher outputs are missing ({0})")]
    MissingTeacher(&'static str),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How each Gram matrix is scaled before comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramNorm {
    /// Divide the whole matrix by its Frobenius norm.
    #[default]
    Frobenius,
    /// Divide each row by its L2 norm.
    RowWise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Softmax temperature for `L_V`.
    pub tau: f64,
    /// Scale applied to `L_U`.
    pub xi: f64,
    /// Weight of the lower-capsule term.
    pub eta: f64,
    /// Weight of the higher-capsule term; the task loss gets `1 - alpha`.
    pub alpha: f64,
    pub task: Head,
    #[serde(default)]
    pub gram_norm: GramNorm,
}

impl DistillConfig {
    pub fn classification() -> Self {
        Self {
            tau: 1.0,
            xi: 1e3,
            eta: 0.3,
            alpha: 0.7,
            task: Head::Classification,
            gram_norm: GramNorm::Frobenius,
        }
    }

    pub fn regression() -> Self {
        Self {
            alpha: 0.3,
            task: Head::Regression,
            ..Self::classification()
        }
    }

    pub fn for_task(task: Head) -> Self {
        match task {
            Head::Classification => Self::classification(),
            Head::Regression => Self::regression(),
        }
    }

    /// The same config with both distillation weights zeroed, leaving only
    /// the task loss.
    pub fn scratch(&self) -> Self {
        Self {
            eta: 0.0,
            alpha: 0.0,
            ..self.clone()
        }
    }

    pub fn uses_teacher(&self) -> bool {
        self.eta > 0.0 || self.alpha > 0.0
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::InvalidConfig(m.into()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.xi > 0.0) {
            return bad("xi must be positive");
        }
        if !(self.eta >= 0.0) {
            return bad("eta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_u: f64,
    pub l_v: f64,
    pub l_task: f64,
    pub l_total: f64,
    /// `eta * xi * l_u`
    pub weighted_u: f64,
    /// `alpha * l_v`
    pub weighted_v: f64,
    /// `(1 - alpha) * l_task`
    pub weighted_task: f64,
}
