// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Distill,
    Scratch,
}

impl Phase {
    pub fn default_epochs(self) -> usize {
        match self {
            Phase::Pretrain => 200,
            _ => 50,
        }
    }

    pub fn default_batch(self) -> usize {
        match self {
            Phase::Pretrain => 64,
            _ => 8,
        }
    }

    /// Whether the distillation terms take part in the loss.
    pub fn distills(self) -> bool {
        self == Phase::Distill
    }

    /// Whether this phase trains the teacher architecture.
    pub fn trains_teacher(self) -> bool {
        matches!(self, Phase::Pretrain | Phase::Finetune)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Distill => "distill",
            Phase::Scratch => "scratch",
        })
    }
}

/// Learning rate for a 1-based `epoch`.
///
/// Pre-training starts at 1e-3, drops tenfold after epoch 100 and a further
/// fivefold after epoch 150. Every other phase uses a fixed 1e-3.
pub fn lr_at(epoch: usize, phase: Phase) -> f64 {
    match phase {
        Phase::Pretrain if epoch > 150 => 2e-5,
        Phase::Pretrain if epoch > 100 => 1e-4,
        _ => 1e-3,
    }
}
