// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

pub mod tensorcore;
pub mod capsnet;
pub mod distill;
pub mod signal;
pub mod data;
pub mod training;

pub use capsnet::{ArchSpec, Head, ModelParams};
pub use data::{Dataset, Protocol, Split, SynthSpec, Target};
pub use distill::DistillConfig;
pub use signal::{BandSpec, DeMethod, RawRecording};
pub use tensorcore::Tensor;
pub use training::{ExperimentPlan, MetricReport, Phase, TrainError, TrainedModel};
