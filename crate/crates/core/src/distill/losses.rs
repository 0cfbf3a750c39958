// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use super::{DistillConfig, DistillError, GramNorm, LossReport};
use crate::tensorcore::{Graph, Tensor, Var};

pub const MARGIN_POS: f64 = 0.9;
pub const MARGIN_NEG: f64 = 0.1;
pub const MARGIN_DOWNWEIGHT: f64 = 0.5;

/// Lower-capsule loss on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LowerLoss {
    pub loss: Var,
    /// Number of batch items whose teacher or student Gram was all zero and
    /// therefore left unnormalized.
    pub degenerate: usize,
}

fn normalized_gram(g: &mut Graph, u: Var, norm: GramNorm) -> Result<(Var, usize), DistillError> {
    let s = g.shape(u).to_vec();
    let (b, d) = (s[0], s[2]);
    let gram = g.batch_gram(u)?;
    let row_len = match norm {
        GramNorm::Frobenius => d * d,
        GramNorm::RowWise => d,
    };
    let degenerate = g
        .value(gram)
        .data()
        .chunks(d * d)
        .filter(|m| m.iter().all(|&v| v == 0.0))
        .count();
    let flat = g.reshape(gram, &[b, d * d])?;
    Ok((g.normalize_rows(flat, row_len)?, degenerate))
}

/// `L_U`: squared Frobenius distance between the normalized `d x d` Grams
/// of teacher `[B, A, d]` and student `[B, A', d]` lower capsules, averaged
/// over the batch. Capsule counts may differ; the dimension must not.
pub fn lower_loss(g: &mut Graph, teacher: Var, student: Var, norm: GramNorm) -> Result<LowerLoss, DistillError> {
    let (st, ss) = (g.shape(teacher).to_vec(), g.shape(student).to_vec());
    if st.len() != 3 || ss.len() != 3 || st[0] != ss[0] || st[2] != ss[2] {
        return Err(DistillError::Tensor(crate::tensorcore::TensorError::ShapeMismatch {
            op: "lower_loss",
            left: st,
            right: ss,
        }));
    }
    let (gt, dt) = normalized_gram(g, teacher, norm)?;
    let (gs, ds) = normalized_gram(g, student, norm)?;
    let degenerate = dt + ds;
    if degenerate > 0 {
        log::warn!("lower-capsule loss: {degenerate} all-zero Gram matrices left unnormalized");
    }
    let diff = g.sub(gt, gs)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    let loss = g.scale(total, 1.0 / st[0] as f64)?;
    Ok(LowerLoss { loss, degenerate })
}

/// `L_V`: `tau^2 * KL(softmax(teacher / tau) || softmax(student / tau))`
/// over capsule lengths `[B, K]`, with the student in log space. The teacher
/// side is detached.
pub fn higher_loss(g: &mut Graph, teacher: Var, student: Var, tau: f64) -> Result<Var, DistillError> {
    g.check_same_shape("higher_loss", teacher, student)?;
    let b = g.shape(teacher)[0] as f64;
    let t = g.detach(teacher);
    let t = g.scale(t, 1.0 / tau)?;
    let p = g.softmax(t)?;
    let log_p = g.log_softmax(t)?;
    let s = g.scale(student, 1.0 / tau)?;
    let log_q = g.log_softmax(s)?;
    let diff = g.sub(log_p, log_q)?;
    let kl = g.mul(p, diff)?;
    let kl = g.sum(kl)?;
    Ok(g.scale(kl, tau * tau / b)?)
}

fn one_hot(labels: &[usize], k: usize) -> Result<Tensor, DistillError> {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(DistillError::InvalidLabel(format!("class {c} out of range for {k} capsules")));
        }
        t.data_mut()[i * k + c] = 1.0;
    }
    Ok(t)
}

/// Margin loss on capsule lengths `[B, K]` against a `[B, K]` one-hot target,
/// summed over classes and averaged over the batch.
pub fn margin_loss_one_hot(g: &mut Graph, lengths: Var, targets: &Tensor) -> Result<Var, DistillError> {
    let s = g.shape(lengths).to_vec();
    if targets.shape() != s.as_slice() {
        return Err(DistillError::InvalidLabel(format!(
            "targets {:?} do not match lengths {s:?}",
            targets.shape()
        )));
    }
    let k = s[1];
    for row in targets.data().chunks(k) {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != k {
            return Err(DistillError::InvalidLabel(format!("{row:?} is not one-hot")));
        }
    }
    let t = g.constant(targets.clone());
    let not_t: Vec<f64> = targets.data().iter().map(|v| MARGIN_DOWNWEIGHT * (1.0 - v)).collect();
    let not_t = g.constant(Tensor::new(&s, not_t)?);

    let neg = g.scale(lengths, -1.0)?;
    let pos_gap = g.add_scalar(neg, MARGIN_POS)?;
    let pos_gap = g.relu(pos_gap)?;
    let pos = g.square(pos_gap)?;
    let pos = g.mul(t, pos)?;

    let neg_gap = g.add_scalar(lengths, -MARGIN_NEG)?;
    let neg_gap = g.relu(neg_gap)?;
    let negs = g.square(neg_gap)?;
    let negs = g.mul(not_t, negs)?;

    let per = g.add(pos, negs)?;
    let total = g.sum(per)?;
    Ok(g.scale(total, 1.0 / s[0] as f64)?)
}

pub fn margin_loss(g: &mut Graph, lengths: Var, labels: &[usize]) -> Result<Var, DistillError> {
    let k = g.shape(lengths)[1];
    let targets = one_hot(labels, k)?;
    margin_loss_one_hot(g, lengths, &targets)
}

/// Mean squared error between predictions `[B]` and labels.
pub fn mse_loss(g: &mut Graph, pred: Var, labels: &[f64]) -> Result<Var, DistillError> {
    let y = g.constant(Tensor::new(g.shape(pred), labels.to_vec())?);
    let d = g.sub(pred, y)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

/// Graph handles of the combined objective.
#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub l_u: Option<Var>,
    pub l_v: Option<Var>,
    pub l_task: Var,
}

impl TotalLoss {
    pub fn report(&self, g: &Graph, cfg: &DistillConfig) -> LossReport {
        let val = |v: Option<Var>| v.map(|v| g.value(v).data()[0]).unwrap_or(0.0);
        let (l_u, l_v) = (val(self.l_u), val(self.l_v));
        let l_task = g.value(self.l_task).data()[0];
        LossReport {
            l_u,
            l_v,
            l_task,
            l_total: g.value(self.total).data()[0],
            weighted_u: cfg.eta * cfg.xi * l_u,
            weighted_v: cfg.alpha * l_v,
            weighted_task: (1.0 - cfg.alpha) * l_task,
        }
    }
}

/// Combines the terms as `eta*xi*L_U + alpha*L_V + (1-alpha)*L_task`. Terms
/// with zero weight may be omitted.
pub fn combine(
    g: &mut Graph,
    l_u: Option<Var>,
    l_v: Option<Var>,
    l_task: Var,
    cfg: &DistillConfig,
) -> Result<TotalLoss, DistillError> {
    cfg.validate()?;
    let mut total = g.scale(l_task, 1.0 - cfg.alpha)?;
    if cfg.eta > 0.0 {
        let u = l_u.ok_or(DistillError::MissingTeacher("lower capsules"))?;
        let wu = g.scale(u, cfg.eta * cfg.xi)?;
        total = g.add(total, wu)?;
    }
    if cfg.alpha > 0.0 {
        let v = l_v.ok_or(DistillError::MissingTeacher("higher capsule lengths"))?;
        let wv = g.scale(v, cfg.alpha)?;
        total = g.add(total, wv)?;
    }
    Ok(TotalLoss { total, l_u, l_v, l_task })
}

// Value-level entry points for single examples.

fn batch_of_one(t: &Tensor) -> Result<Tensor, DistillError> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Ok(t.reshaped(&shape)?)
}

/// `u^T u` for capsules `u [A, d]`.
pub fn covariance_gram(u: &Tensor) -> Result<Tensor, DistillError> {
    let mut g = Graph::new();
    let x = g.constant(batch_of_one(u)?);
    let gram = g.batch_gram(x)?;
    let d = u.shape()[1];
    Ok(g.value(gram).reshaped(&[d, d])?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerLossValue {
    pub value: f64,
    pub degenerate: bool,
}

pub fn loss_lower(teacher: &Tensor, student: &Tensor, norm: GramNorm) -> Result<LowerLossValue, DistillError> {
    let mut g = Graph::new();
    let t = g.constant(batch_of_one(teacher)?);
    let s = g.constant(batch_of_one(student)?);
    let l = lower_loss(&mut g, t, s, norm)?;
    Ok(LowerLossValue {
        value: g.value(l.loss).data()[0],
        degenerate: l.degenerate > 0,
    })
}

pub fn loss_higher(teacher: &[f64], student: &[f64], tau: f64) -> Result<f64, DistillError> {
    let mut g = Graph::new();
    let t = g.constant(Tensor::new(&[1, teacher.len()], teacher.to_vec())?);
    let s = g.constant(Tensor::new(&[1, student.len()], student.to_vec())?);
    let l = higher_loss(&mut g, t, s, tau)?;
    Ok(g.value(l).data()[0])
}

pub fn margin_loss_value(lengths: &[f64], one_hot: &[f64]) -> Result<f64, DistillError> {
    let mut g = Graph::new();
    let l = g.constant(Tensor::new(&[1, lengths.len()], lengths.to_vec())?);
    let t = Tensor::new(&[1, one_hot.len()], one_hot.to_vec())
        .map_err(|_| DistillError::InvalidLabel("one-hot length differs from lengths".into()))?;
    let loss = margin_loss_one_hot(&mut g, l, &t)?;
    Ok(g.value(loss).data()[0])
}

pub fn mse(pred: &[f64], labels: &[f64]) -> Result<f64, DistillError> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::from_vec(pred.to_vec()));
    let l = mse_loss(&mut g, p, labels)?;
    Ok(g.value(l).data()[0])
}

/// Combines precomputed loss values. `l_u` and `l_v` are required whenever
/// their weights are non-zero.
pub fn total_loss(l_u: Option<f64>, l_v: Option<f64>, l_task: f64, cfg: &DistillConfig) -> Result<LossReport, DistillError> {
    let mut g = Graph::new();
    let u = l_u.map(|v| g.constant(Tensor::scalar(v)));
    let v = l_v.map(|v| g.constant(Tensor::scalar(v)));
    let t = g.constant(Tensor::scalar(l_task));
    let total = combine(&mut g, u, v, t, cfg)?;
    Ok(total.report(&g, cfg))
}
