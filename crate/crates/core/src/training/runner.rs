// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_at, metrics, Adam, MetricReport, OptimConfig, Phase, Standardizer, TrainError, TrainedModel};
use crate::capsnet::{forward, predict_classes, ArchSpec, Head, ModelParams};
use crate::data::{sample_fraction, Dataset, Protocol, Split, Target};
use crate::distill::{combine, higher_loss, lower_loss, margin_loss, mse_loss, DistillConfig, LossReport};
use crate::tensorcore::{Graph, Tensor};

const EVAL_BATCH: usize = 64;

/// Everything needed to reproduce one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of each split's training set actually used, drawn with `seed`.
    #[serde(default = "full_fraction")]
    pub data_fraction: f64,
    pub distill: DistillConfig,
    pub teacher: ArchSpec,
    pub student: ArchSpec,
    #[serde(default)]
    pub optimizer: OptimConfig,
    pub protocol: Protocol,
    /// Evaluate the test split every this many epochs; 0 evaluates only
    /// after the last epoch.
    #[serde(default)]
    pub eval_every: usize,
}

fn full_fraction() -> f64 {
    1.0
}

impl ExperimentPlan {
    pub fn new(phase: Phase, teacher: ArchSpec, student: ArchSpec, protocol: Protocol) -> Self {
        Self {
            phase,
            epochs: phase.default_epochs(),
            batch_size: phase.default_batch(),
            seed: 0,
            data_fraction: 1.0,
            distill: DistillConfig::for_task(student.head),
            teacher,
            student,
            optimizer: OptimConfig::default(),
            protocol,
            eval_every: 0,
        }
    }

    /// The same plan for another phase, with that phase's epoch and batch
    /// defaults.
    pub fn for_phase(&self, phase: Phase) -> Self {
        Self {
            phase,
            epochs: phase.default_epochs(),
            batch_size: phase.default_batch(),
            ..self.clone()
        }
    }

    /// Architecture trained by this phase.
    pub fn trained_arch(&self) -> &ArchSpec {
        if self.phase.trains_teacher() {
            &self.teacher
        } else {
            &self.student
        }
    }

    /// Loss weights in effect: distillation weights apply only to the
    /// distill phase.
    pub fn loss_config(&self) -> DistillConfig {
        if self.phase.distills() {
            self.distill.clone()
        } else {
            self.distill.scratch()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data fraction {} outside (0, 1]", self.data_fraction));
        }
        self.distill.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        let (t, s) = (&self.teacher, &self.student);
        if t.head != s.head || self.distill.task != s.head {
            return bad("teacher, student and distillation config must share one task".into());
        }
        if t.features != s.features || t.windows != s.windows {
            return bad(format!(
                "teacher input {}x{} differs from student input {}x{}",
                t.windows, t.features, s.windows, s.features
            ));
        }
        if self.phase.distills() && (t.lower_dim() != s.lower_dim() || t.higher_count != s.higher_count) {
            return bad(format!(
                "distillation needs equal capsule dimension and class count: teacher d={} K={}, student d={} K={}",
                t.lower_dim(),
                t.higher_count,
                s.lower_dim(),
                s.higher_count
            ));
        }
        Ok(())
    }
}

/// Teacher lower capsules `[A, d]` and capsule lengths `[K]` per segment,
/// computed once in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherOutputs {
    pub lower_count: usize,
    pub lower_dim: usize,
    pub classes: usize,
    entries: HashMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl TeacherOutputs {
    pub fn compute(teacher: &TrainedModel, data: &Dataset, indices: &[usize]) -> Result<Self, TrainError> {
        let spec = teacher.spec();
        check_data(spec, data)?;
        let (a, d, k) = (spec.lower_count(), spec.lower_dim(), spec.higher_count);
        let mut entries = HashMap::with_capacity(indices.len());
        for chunk in indices.chunks(EVAL_BATCH) {
            let mut g = Graph::new();
            let bound = teacher.params.bind(&mut g, false);
            let x = g.constant(batch_input(data, &teacher.standardizer, chunk));
            let out = forward(&mut g, x, &bound)?;
            let lower = g.value(out.lower).data();
            let lengths = g.value(out.lengths).data();
            for (j, &i) in chunk.iter().enumerate() {
                entries.insert(
                    i,
                    (lower[j * a * d..(j + 1) * a * d].to_vec(), lengths[j * k..(j + 1) * k].to_vec()),
                );
            }
        }
        Ok(Self {
            lower_count: a,
            lower_dim: d,
            classes: k,
            entries,
        })
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.contains_key(&index)
    }

    fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let (a, d, k) = (self.lower_count, self.lower_dim, self.classes);
        let mut lower = Vec::with_capacity(indices.len() * a * d);
        let mut lengths = Vec::with_capacity(indices.len() * k);
        for i in indices {
            let (l, v) = &self.entries[i];
            lower.extend_from_slice(l);
            lengths.extend_from_slice(v);
        }
        (
            Tensor::new(&[indices.len(), a, d], lower).expect("teacher capsule batch"),
            Tensor::new(&[indices.len(), k], lengths).expect("teacher length batch"),
        )
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub lr: f64,
    pub l_u: f64,
    pub l_v: f64,
    pub l_task: f64,
    pub l_total: f64,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
    pub pcc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochLog>,
    /// Metrics on the split's test set after the last epoch.
    pub report: MetricReport,
    /// Task loss of the very first batch, before any update.
    pub first_task_loss: f64,
    pub skipped_steps: usize,
    /// Training indices after fraction sampling.
    pub train_indices: Vec<usize>,
}

fn check_data(spec: &ArchSpec, data: &Dataset) -> Result<(), TrainError> {
    if spec.features != data.features || spec.windows != data.windows || spec.head != data.task {
        return Err(TrainError::Config(format!(
            "model expects {}x{} {:?} inputs, dataset holds {}x{} {:?}",
            spec.windows, spec.features, spec.head, data.windows, data.features, data.task
        )));
    }
    Ok(())
}

fn batch_input(data: &Dataset, norm: &Standardizer, indices: &[usize]) -> Tensor {
    let per = data.windows * data.features;
    let mut values = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        values.extend(norm.apply(data.records[i].features.data()));
    }
    Tensor::new(&[indices.len(), data.windows, data.features], values).expect("input batch")
}

fn labels_of(data: &Dataset, indices: &[usize]) -> Vec<Target> {
    indices.iter().map(|&i| data.records[i].target).collect()
}

fn task_loss(
    g: &mut Graph,
    head: Head,
    out: &crate::capsnet::ForwardOutput,
    labels: &[Target],
) -> Result<(crate::tensorcore::Var, Vec<Target>), TrainError> {
    match head {
        Head::Classification => {
            let classes: Vec<usize> = labels.iter().map(|t| t.class().expect("class label")).collect();
            let loss = margin_loss(g, out.lengths, &classes)?;
            let preds = predict_classes(g.value(out.lengths)).into_iter().map(Target::Class).collect();
            Ok((loss, preds))
        }
        Head::Regression => {
            let pred = out.regression.expect("regression head present");
            let targets: Vec<f64> = labels.iter().map(|t| t.scalar().expect("scalar label")).collect();
            let loss = mse_loss(g, pred, &targets)?;
            let preds = g.value(pred).data().iter().map(|&v| Target::Scalar(v)).collect();
            Ok((loss, preds))
        }
    }
}

/// Predictions, metrics and mean task loss of `model` on `indices`.
pub fn evaluate(model: &TrainedModel, data: &Dataset, indices: &[usize]) -> Result<(Vec<Target>, MetricReport, f64), TrainError> {
    check_data(model.spec(), data)?;
    let mut preds = Vec::with_capacity(indices.len());
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let x = g.constant(batch_input(data, &model.standardizer, chunk));
        let out = forward(&mut g, x, &bound)?;
        let (loss, p) = task_loss(&mut g, model.spec().head, &out, &labels_of(data, chunk))?;
        loss_sum += g.value(loss).data()[0] * chunk.len() as f64;
        preds.extend(p);
    }
    let report = metrics(&preds, &labels_of(data, indices), data.task)?;
    Ok((preds, report, loss_sum / indices.len() as f64))
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains one phase on `split.train` and scores it on `split.test`.
///
/// `init` supplies starting weights and normalization (required for
/// fine-tuning); otherwise weights come from `plan.seed` and normalization
/// is fitted on the training subset. `teacher` is required when the plan
/// distills.
pub fn run_phase(
    plan: &ExperimentPlan,
    data: &Dataset,
    split: &Split,
    init: Option<&TrainedModel>,
    teacher: Option<&TeacherOutputs>,
) -> Result<PhaseOutcome, TrainError> {
    plan.validate()?;
    let arch = plan.trained_arch();
    check_data(arch, data)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(TrainError::EmptySplit(split.name.clone()));
    }
    if plan.protocol == Protocol::Loso {
        if let Some(&i) = split.train.iter().find(|&&i| data.records[i].provenance.subject == split.subject) {
            return Err(TrainError::Protocol(format!(
                "segment {i} of held-out subject {} is in the training set of {}",
                split.subject, split.name
            )));
        }
    }
    let cfg = plan.loss_config();
    if cfg.uses_teacher() {
        let outputs = teacher.ok_or_else(|| TrainError::MissingTeacher(plan.phase.to_string()))?;
        if outputs.lower_dim != arch.lower_dim() || outputs.classes != arch.higher_count {
            return Err(TrainError::Config(format!(
                "teacher outputs have d={} K={}, student has d={} K={}",
                outputs.lower_dim,
                outputs.classes,
                arch.lower_dim(),
                arch.higher_count
            )));
        }
    }
    if plan.phase == Phase::Finetune && init.is_none() {
        return Err(TrainError::MissingTeacher(plan.phase.to_string()));
    }

    let train = sample_fraction(&split.train, plan.data_fraction, plan.seed)?;
    if data.task == Head::Classification {
        let present: BTreeSet<usize> = train.iter().filter_map(|&i| data.records[i].target.class()).collect();
        if present.len() < data.class_count() {
            log::warn!(
                "{}: only {} of {} classes present in the {:.0}% training subset",
                split.name,
                present.len(),
                data.class_count(),
                plan.data_fraction * 100.0
            );
        }
    }
    if let Some(outputs) = teacher.filter(|_| cfg.uses_teacher()) {
        if let Some(&i) = train.iter().find(|&&i| !outputs.contains(i)) {
            return Err(TrainError::Config(format!("teacher outputs missing for segment {i}")));
        }
    }

    let (mut params, standardizer) = match init {
        Some(m) => {
            if m.spec() != arch {
                return Err(TrainError::Caps(crate::capsnet::CapsError::Mismatch(format!(
                    "initial checkpoint has layers {} hidden {}, plan expects layers {} hidden {}",
                    m.spec().lstm_layers,
                    m.spec().hidden,
                    arch.lstm_layers,
                    arch.hidden
                ))));
            }
            (m.params.clone(), m.standardizer.clone())
        }
        None => (
            ModelParams::init(arch, &mut seeded(plan.seed, 0))?,
            Standardizer::fit(data, &train),
        ),
    };
    let mut adam = {
        let tensors: Vec<&Tensor> = params.named_tensors().into_iter().map(|(_, t)| t).collect();
        Adam::new(plan.optimizer.clone(), &tensors)
    };

    let mut log = Vec::new();
    let mut first_task_loss = None;
    let mut skipped = 0;
    let mut report = None;
    for epoch in 1..=plan.epochs {
        let lr = lr_at(epoch, plan.phase);
        let mut order = train.clone();
        order.shuffle(&mut seeded(plan.seed, epoch as u64));
        let mut sums = LossReport::default();
        let mut preds = Vec::with_capacity(order.len());
        for batch in order.chunks(plan.batch_size) {
            let labels = labels_of(data, batch);
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let x = g.constant(batch_input(data, &standardizer, batch));
            let out = forward(&mut g, x, &bound)?;
            let (l_task, p) = task_loss(&mut g, arch.head, &out, &labels)?;
            let (mut l_u, mut l_v) = (None, None);
            if let Some(outputs) = teacher.filter(|_| cfg.uses_teacher()) {
                let (t_lower, t_len) = outputs.batch(batch);
                if cfg.eta > 0.0 {
                    let t = g.constant(t_lower);
                    l_u = Some(lower_loss(&mut g, t, out.lower, cfg.gram_norm)?.loss);
                }
                if cfg.alpha > 0.0 {
                    let t = g.constant(t_len);
                    l_v = Some(higher_loss(&mut g, t, out.lengths, cfg.tau)?);
                }
            }
            let total = combine(&mut g, l_u, l_v, l_task, &cfg)?;
            let r = total.report(&g, &cfg);
            first_task_loss.get_or_insert(r.l_task);
            g.backward(total.total)?;
            let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| g.grad_or_zeros(v)).collect();
            drop(g);
            match adam.step(&mut params.tensors_mut(), &grads, lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
            let w = batch.len() as f64;
            sums.l_u += r.l_u * w;
            sums.l_v += r.l_v * w;
            sums.l_task += r.l_task * w;
            sums.l_total += r.l_total * w;
            preds.extend(p);
        }
        let n = order.len() as f64;
        let train_report = metrics(&preds, &labels_of(data, &order), data.task)?;
        log.push(EpochLog {
            epoch,
            split: "train".into(),
            lr,
            l_u: sums.l_u / n,
            l_v: sums.l_v / n,
            l_task: sums.l_task / n,
            l_total: sums.l_total / n,
            accuracy: train_report.accuracy,
            rmse: train_report.rmse,
            pcc: train_report.pcc,
        });
        let last = epoch == plan.epochs;
        if last || (plan.eval_every > 0 && epoch % plan.eval_every == 0) {
            let model = TrainedModel {
                params: params.clone(),
                standardizer: standardizer.clone(),
            };
            let (_, r, test_loss) = evaluate(&model, data, &split.test)?;
            log.push(EpochLog {
                epoch,
                split: "test".into(),
                lr,
                l_u: 0.0,
                l_v: 0.0,
                l_task: test_loss,
                l_total: test_loss,
                accuracy: r.accuracy,
                rmse: r.rmse,
                pcc: r.pcc,
            });
            if last {
                report = Some(r);
            }
        }
    }
    Ok(PhaseOutcome {
        model: TrainedModel { params, standardizer },
        log,
        report: report.expect("at least one epoch"),
        first_task_loss: first_task_loss.expect("at least one batch"),
        skipped_steps: skipped,
        train_indices: train,
    })
}

/// Runs `f(0..n)` on up to `workers` threads and returns results in index
/// order.
pub fn parallel_map<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect()
}
