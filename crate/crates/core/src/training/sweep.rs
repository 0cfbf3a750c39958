// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{parallel_map, run_phase, ExperimentPlan, MetricReport, Phase, Summary, TeacherOutputs, TrainError};
use crate::capsnet::{ArchSpec, Head};
use crate::data::{Dataset, Split};

/// One independent evaluation unit of a sweep: a split plus the teacher
/// outputs precomputed for its training segments.
#[derive(Clone, Debug)]
pub struct SweepJob {
    pub split: Split,
    pub teacher: TeacherOutputs,
}

/// One plot-ready row: a rung or fraction in one arm, aggregated over jobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rung: usize,
    pub layers: usize,
    pub hidden: usize,
    pub params: usize,
    pub compression_ratio: f64,
    pub fraction: f64,
    /// `distill` or `scratch`.
    pub arm: String,
    /// `accuracy` or `rmse`.
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// Regression only.
    pub pcc_mean: Option<f64>,
    pub pcc_sd: Option<f64>,
}

/// Student parameters over teacher parameters.
pub fn compression_ratio(student: &ArchSpec, teacher: &ArchSpec) -> f64 {
    student.param_count() as f64 / teacher.param_count() as f64
}

const ARMS: [(Phase, &str); 2] = [(Phase::Distill, "distill"), (Phase::Scratch, "scratch")];

struct Cell {
    student: ArchSpec,
    rung: usize,
    fraction: f64,
    phase: Phase,
}

fn run_cells(
    plan: &ExperimentPlan,
    data: &Dataset,
    jobs: &[SweepJob],
    cells: &[Cell],
    workers: usize,
) -> Result<Vec<Vec<MetricReport>>, TrainError> {
    if jobs.is_empty() {
        return Err(TrainError::Config("a sweep needs at least one split".into()));
    }
    let per_cell = jobs.len();
    let results = parallel_map(workers, cells.len() * per_cell, |n| {
        let (cell, j) = (&cells[n / per_cell], n % per_cell);
        let job_plan = ExperimentPlan {
            phase: cell.phase,
            student: cell.student.clone(),
            data_fraction: cell.fraction,
            seed: plan.seed + j as u64,
            ..plan.clone()
        };
        let teacher = cell.phase.distills().then_some(&jobs[j].teacher);
        run_phase(&job_plan, data, &jobs[j].split, None, teacher).map(|o| o.report)
    });
    let mut reports = Vec::with_capacity(cells.len());
    let mut it = results.into_iter();
    for _ in cells {
        reports.push(it.by_ref().take(per_cell).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(reports)
}

fn row(cell: &Cell, teacher: &ArchSpec, arm: &str, reports: &[MetricReport]) -> SweepRow {
    let primary: Vec<f64> = reports.iter().map(MetricReport::primary).collect();
    let s = Summary::of(&primary);
    let regression = cell.student.head == Head::Regression;
    let pcc = Summary::of(&reports.iter().map(|r| r.pcc.unwrap_or(f64::NAN)).collect::<Vec<_>>());
    SweepRow {
        rung: cell.rung,
        layers: cell.student.lstm_layers,
        hidden: cell.student.hidden,
        params: cell.student.param_count(),
        compression_ratio: compression_ratio(&cell.student, teacher),
        fraction: cell.fraction,
        arm: arm.to_string(),
        metric: if regression { "rmse" } else { "accuracy" }.to_string(),
        mean: s.mean,
        sd: s.sd,
        n: s.n,
        pcc_mean: regression.then_some(pcc.mean),
        pcc_sd: regression.then_some(pcc.sd),
    }
}

fn sweep(plan: &ExperimentPlan, data: &Dataset, jobs: &[SweepJob], cells: Vec<Cell>, workers: usize) -> Result<Vec<SweepRow>, TrainError> {
    for c in &cells {
        ExperimentPlan {
            phase: c.phase,
            student: c.student.clone(),
            data_fraction: c.fraction,
            ..plan.clone()
        }
        .validate()?;
    }
    let reports = run_cells(plan, data, jobs, &cells, workers)?;
    Ok(cells
        .iter()
        .zip(&reports)
        .map(|(c, r)| row(c, &plan.teacher, if c.phase.distills() { ARMS[0].1 } else { ARMS[1].1 }, r))
        .collect())
}

/// Trains every `(layers, hidden)` rung with and without distillation on
/// every job. Rows come rung by rung, distill before scratch.
pub fn sweep_model_size(
    plan: &ExperimentPlan,
    data: &Dataset,
    jobs: &[SweepJob],
    ladder: &[(usize, usize)],
    workers: usize,
) -> Result<Vec<SweepRow>, TrainError> {
    let mut cells = Vec::with_capacity(2 * ladder.len());
    for (rung, &(layers, hidden)) in ladder.iter().enumerate() {
        for (phase, _) in ARMS {
            cells.push(Cell {
                student: plan.student.with_layers(layers, hidden),
                rung,
                fraction: plan.data_fraction,
                phase,
            });
        }
    }
    sweep(plan, data, jobs, cells, workers)
}

/// Trains the plan's student on each training fraction with and without
/// distillation. Subsets are drawn from the plan seed offset by job index.
pub fn sweep_data_fraction(
    plan: &ExperimentPlan,
    data: &Dataset,
    jobs: &[SweepJob],
    fractions: &[f64],
    workers: usize,
) -> Result<Vec<SweepRow>, TrainError> {
    let mut cells = Vec::with_capacity(2 * fractions.len());
    for (rung, &fraction) in fractions.iter().enumerate() {
        for (phase, _) in ARMS {
            cells.push(Cell {
                student: plan.student.clone(),
                rung,
                fraction,
                phase,
            });
        }
    }
    sweep(plan, data, jobs, cells, workers)
}
