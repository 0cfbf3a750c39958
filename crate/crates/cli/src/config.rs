// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use capsdistill::data::{synthesize_dataset, Dataset};
use capsdistill::training::OptimConfig;
use capsdistill::{ArchSpec, DeMethod, DistillConfig, ExperimentPlan, Head, Phase, Protocol, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Where segments come from: a directory of FTZ files or a synthetic spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub dir: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub de_method: DeMethod,
}

impl DataSource {
    pub fn load(&self) -> anyhow::Result<Dataset> {
        match (&self.dir, &self.synth) {
            (Some(dir), None) => Ok(Dataset::load_dir(dir)?),
            (None, Some(spec)) => Ok(synthesize_dataset(spec, self.de_method)?),
            (Some(_), Some(_)) => Err(ConfigError("set either data.dir or data.synth, not both".into()).into()),
            (None, None) => Err(ConfigError("no data source: set data.dir, data.synth or --data".into()).into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `(layers, hidden)` rungs; defaults to the standard student ladder.
    pub ladder: Option<Vec<(usize, usize)>>,
    /// Defaults to 0.1 through 0.9.
    pub fractions: Option<Vec<f64>>,
}

/// Contents of a run configuration file. Every field may also come from a
/// command-line flag, which takes precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSource,
    pub phase: Option<Phase>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub data_fraction: Option<f64>,
    pub protocol: Option<Protocol>,
    pub teacher: Option<ArchSpec>,
    pub student: Option<ArchSpec>,
    pub distill: Option<DistillConfig>,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default)]
    pub eval_every: usize,
    /// Output directory, relative to the output root.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    /// Resolves every default against the dataset's shape and task.
    pub fn plan(&self, data: &Dataset) -> anyhow::Result<ExperimentPlan> {
        let Some(phase) = self.phase else {
            bail!(ConfigError("no phase given: set phase or pass --phase".into()));
        };
        let base = match data.task {
            Head::Classification => ArchSpec::classification_teacher(),
            Head::Regression => ArchSpec::regression_teacher(),
        };
        let teacher = self.teacher.clone().unwrap_or(ArchSpec {
            features: data.features,
            windows: data.windows,
            higher_count: match data.task {
                Head::Classification => data.class_count().max(2),
                Head::Regression => base.higher_count,
            },
            ..base
        });
        let student = self.student.clone().unwrap_or_else(|| teacher.student_of(16));
        let protocol = self.protocol.unwrap_or(match (phase, data.task) {
            (Phase::Pretrain, _) => Protocol::Loso,
            (_, Head::Classification) => Protocol::FixedSession { train_sessions: 9 },
            (_, Head::Regression) => Protocol::Kfold { folds: 5 },
        });
        let mut plan = ExperimentPlan::new(phase, teacher, student, protocol);
        plan.epochs = self.epochs.unwrap_or(plan.epochs);
        plan.batch_size = self.batch_size.unwrap_or(plan.batch_size);
        plan.seed = self.seed;
        plan.data_fraction = self.data_fraction.unwrap_or(1.0);
        if let Some(d) = &self.distill {
            plan.distill = d.clone();
        }
        plan.optimizer = self.optimizer.clone();
        plan.eval_every = self.eval_every;
        plan.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(plan)
    }
}
