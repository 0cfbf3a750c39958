// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Routing-by-agreement between lower and higher capsule levels.

use crate::tensorcore::{Graph, Tensor, TensorError, Var};

/// Graph handles produced by [`route`].
#[derive(Clone, Debug)]
pub struct Routing {
    /// Higher capsules `[B, K, H]`.
    pub higher: Var,
    /// Final coupling coefficients `[B, A, K]`.
    pub coupling: Var,
    /// Coupling coefficients of every iteration, first to last.
    pub history: Vec<Var>,
}

/// Dynamic routing over prediction vectors `u_hat [B, A, K, H]`.
///
/// Logits start at zero; each iteration takes a softmax over the higher
/// capsules, forms the weighted sum, squashes it, and (except on the last
/// iteration) adds the agreement `u_hat . v` to the logits. Gradients flow
/// through every iteration.
pub fn route(g: &mut Graph, u_hat: Var, iters: usize) -> Result<Routing, TensorError> {
    if iters == 0 {
        return Err(TensorError::InvalidArgument("routing needs at least one iteration".into()));
    }
    let s = g.shape(u_hat).to_vec();
    if s.len() != 4 {
        return Err(TensorError::InvalidArgument(format!("u_hat must be [B, A, K, H], got {s:?}")));
    }
    let mut logits = g.constant(Tensor::zeros(&s[..3]));
    let mut history = Vec::with_capacity(iters);
    let mut higher = None;
    for it in 0..iters {
        let c = g.softmax(logits)?;
        history.push(c);
        let total = g.caps_weighted_sum(c, u_hat)?;
        let v = g.squash(total)?;
        higher = Some(v);
        if it + 1 < iters {
            let agree = g.caps_agreement(u_hat, v)?;
            logits = g.add(logits, agree)?;
        }
    }
    Ok(Routing {
        higher: higher.expect("iters >= 1"),
        coupling: *history.last().expect("iters >= 1"),
        history,
    })
}

/// Values of a routing run on a single example.
#[derive(Clone, Debug)]
pub struct RoutingResult {
    /// `[K, H]`
    pub higher: Tensor,
    /// `[A, K]`
    pub coupling: Tensor,
    /// Per-iteration `[A, K]` couplings.
    pub history: Vec<Tensor>,
}

fn unbatch(t: &Tensor) -> Tensor {
    t.reshaped(&t.shape()[1..]).expect("leading batch axis of one")
}

/// `u_hat[i, j] = u[i] . W[i, j]` for one example: `u [A, d]`, `W [A, K, d, H]`.
pub fn predict_vectors(u: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    let mut g = Graph::new();
    let mut shape = vec![1];
    shape.extend_from_slice(u.shape());
    let u = g.constant(u.reshaped(&shape)?);
    let w = g.constant(w.clone());
    let out = g.caps_predict(u, w)?;
    Ok(unbatch(g.value(out)))
}

/// Routing on one example's prediction vectors `u_hat [A, K, H]`.
pub fn dynamic_routing(u_hat: &Tensor, iters: usize) -> Result<RoutingResult, TensorError> {
    let mut g = Graph::new();
    let mut shape = vec![1];
    shape.extend_from_slice(u_hat.shape());
    let u = g.constant(u_hat.reshaped(&shape)?);
    let r = route(&mut g, u, iters)?;
    Ok(RoutingResult {
        higher: unbatch(g.value(r.higher)),
        coupling: unbatch(g.value(r.coupling)),
        history: r.history.iter().map(|&c| unbatch(g.value(c))).collect(),
    })
}
