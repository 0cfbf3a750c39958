// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Labelled segments with provenance, split protocols and a synthetic
//! generator of EEG-like recordings.

mod dataset;
mod split;
mod synth;

pub use dataset::{Dataset, Provenance, SegmentRecord, Target};
pub use split::{make_splits, sample_fraction, Protocol, Split, SplitSet};
pub use synth::{generate_synthetic, synthesize_dataset, SynthRecording, SynthSpec};


#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("protocol {protocol} cannot be applied: {reason}")]
    Protocol { protocol: String, reason: String },
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("no recordings found in {0}")]
    Empty(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
