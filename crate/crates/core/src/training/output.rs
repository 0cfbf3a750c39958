// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochLog, ExperimentPlan, MetricReport, Summary, SweepRow, TrainError};

/// Writes the per-epoch log; absent metrics are left empty.
pub fn write_metrics_csv(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    if log.is_empty() {
        w.write_record(["epoch", "split", "lr", "l_u", "l_v", "l_task", "l_total", "accuracy", "rmse", "pcc"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Result of one split within a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: String,
    pub subject: usize,
    /// Checkpoint path relative to the manifest.
    pub checkpoint: String,
    pub sha256: String,
    pub report: MetricReport,
    pub skipped_steps: usize,
}

/// Everything needed to repeat a training run and check that it matched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub plan: ExperimentPlan,
    /// Free-form snapshot of the configuration that produced `plan`.
    pub config: serde_json::Value,
    pub outcomes: Vec<SplitOutcome>,
    /// Primary metric over all splits.
    pub across_splits: Summary,
    /// Primary metric averaged within each subject, then over subjects.
    pub across_subjects: Summary,
}

impl RunManifest {
    pub fn new(plan: ExperimentPlan, config: serde_json::Value, outcomes: Vec<SplitOutcome>) -> Self {
        let primary: Vec<f64> = outcomes.iter().map(|o| o.report.primary()).collect();
        let mut by_subject: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for o in &outcomes {
            by_subject.entry(o.subject).or_default().push(o.report.primary());
        }
        let subject_means: Vec<f64> = by_subject.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            plan,
            config,
            across_splits: Summary::of(&primary),
            across_subjects: Summary::of(&subject_means),
            outcomes,
        }
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
