// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Optimization, the pre-train / fine-tune / distill protocol, evaluation
//! metrics, and the model-size and data-fraction sweeps.

mod metrics;
mod model;
mod optim;
mod output;
mod runner;
mod schedule;
mod sweep;

pub use metrics::{metrics, MetricReport, Summary};
pub use model::{Standardizer, TrainedModel};
pub use optim::{Adam, OptimConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_WEIGHT_CLIP};
pub use output::{write_metrics_csv, write_sweep_csv, RunManifest, SplitOutcome};
pub use runner::{evaluate, parallel_map, run_phase, EpochLog, ExperimentPlan, PhaseOutcome, TeacherOutputs};
pub use schedule::{lr_at, Phase};
pub use sweep::{compression_ratio, sweep_data_fraction, sweep_model_size, SweepJob, SweepRow};

#[cfg(test)]
mod tests;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("non-finite gradient for parameter {index}; step skipped")]
    NonFiniteGradient { index: usize },
    #[error("the {0} phase needs a teacher")]
    MissingTeacher(String),
    #[error("split {0} has an empty train or test set")]
    EmptySplit(String),
    #[error(transparent)]
    Caps(#[from] crate::capsnet::CapsError),
    #[error(transparent)]
    Distill(#[from] crate::distill::DistillError),
    #[error(transparent)]
    Tensor(#[from] crate::tensorcore::TensorError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
