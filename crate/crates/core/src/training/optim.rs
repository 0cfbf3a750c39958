// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensorcore::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_WEIGHT_CLIP: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Every weight is clamped to `[-weight_clip, weight_clip]` after a step.
    pub weight_clip: f64,
    /// Optional global L2 bound on the gradient, applied before the update.
    pub grad_clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            weight_clip: DEFAULT_WEIGHT_CLIP,
            grad_clip_norm: None,
        }
    }
}

/// Adam with bias correction followed by element-wise weight clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: OptimConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient leaves parameters, moments
    /// and the step counter untouched and returns an error.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(TrainError::Config(format!("parameter {i} changed shape")));
            }
            if !g.all_finite() {
                log::warn!("non-finite gradient in parameter {i} at step {}; skipping update", self.step + 1);
                return Err(TrainError::NonFiniteGradient { index: i });
            }
        }
        let scale = match self.config.grad_clip_norm {
            Some(bound) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > bound {
                    bound / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let clip = self.config.weight_clip;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gr = gr * scale;
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gr;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gr * gr;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                *w = (*w - update).clamp(-clip, clip);
            }
        }
        Ok(())
    }
}
