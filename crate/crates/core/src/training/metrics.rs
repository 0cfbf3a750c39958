// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::capsnet::Head;
use crate::data::Target;

/// Accuracy for classification; RMSE and Pearson correlation for regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Head,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
    pub pcc: Option<f64>,
    /// Set when either vector is constant; `pcc` is then reported as 0.
    pub pcc_undefined: bool,
}

impl MetricReport {
    /// Accuracy or RMSE, whichever the task reports.
    pub fn primary(&self) -> f64 {
        match self.task {
            Head::Classification => self.accuracy.unwrap_or(f64::NAN),
            Head::Regression => self.rmse.unwrap_or(f64::NAN),
        }
    }

    pub fn higher_is_better(&self) -> bool {
        self.task == Head::Classification
    }
}

pub fn metrics(preds: &[Target], labels: &[Target], task: Head) -> Result<MetricReport, TrainError> {
    if preds.len() != labels.len() {
        return Err(TrainError::Config(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(TrainError::Config("no predictions to score".into()));
    }
    let n = preds.len();
    let mismatch = || TrainError::Config(format!("prediction kind does not match the {task:?} task"));
    match task {
        Head::Classification => {
            let mut correct = 0;
            for (p, l) in preds.iter().zip(labels) {
                let (p, l) = (p.class().ok_or_else(mismatch)?, l.class().ok_or_else(mismatch)?);
                correct += usize::from(p == l);
            }
            Ok(MetricReport {
                task,
                count: n,
                accuracy: Some(correct as f64 / n as f64),
                rmse: None,
                pcc: None,
                pcc_undefined: false,
            })
        }
        Head::Regression => {
            let p: Vec<f64> = preds.iter().map(|t| t.scalar().ok_or_else(mismatch)).collect::<Result<_, _>>()?;
            let l: Vec<f64> = labels.iter().map(|t| t.scalar().ok_or_else(mismatch)).collect::<Result<_, _>>()?;
            let rmse = (p.iter().zip(&l).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
            let (pcc, undefined) = match pearson(&p, &l) {
                Some(r) => (r, false),
                None => {
                    log::warn!("constant prediction or label vector; PCC reported as 0");
                    (0.0, true)
                }
            };
            Ok(MetricReport {
                task,
                count: n,
                accuracy: None,
                rmse: Some(rmse),
                pcc: Some(pcc),
                pcc_undefined: undefined,
            })
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation. Undefined values (no samples)
/// are NaN in memory and `null` in JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(deserialize_with = "null_as_nan")]
    pub mean: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub sd: f64,
    pub n: usize,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }
}
