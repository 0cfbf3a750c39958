// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::io::{Read, Write};

use rand::Rng;

use super::routing::route;
use super::spec::{ArchSpec, Head, REGRESSION_HIDDEN};
use super::CapsError;
use crate::tensorcore::{
    init, lstm_forward, read_checkpoint, write_checkpoint, Graph, LstmLayer, LstmVars, NamedTensors, Tensor, Var,
    LEAKY_SLOPE,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionHeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Every trainable tensor of one LSTM-CapsNet.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ArchSpec,
    pub lstm: Vec<LstmLayer>,
    pub norms: Vec<LayerNormParams>,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    /// Per-pair transforms `[A, K, d, H]`.
    pub routing_w: Tensor,
    pub head: Option<RegressionHeadParams>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Result<Self, CapsError> {
        spec.validate()?;
        let m = spec.hidden;
        let l = spec.windows;
        let mut lstm = Vec::with_capacity(spec.lstm_layers);
        let mut norms = Vec::with_capacity(spec.lstm_layers);
        for layer in 0..spec.lstm_layers {
            let input = if layer == 0 { spec.features } else { m };
            lstm.push(LstmLayer::init(input, m, rng));
            norms.push(LayerNormParams {
                gain: Tensor::ones(&[m]),
                bias: Tensor::zeros(&[m]),
            });
        }
        let (a, k, d, h) = (spec.lower_count(), spec.higher_count, spec.lower_dim(), spec.higher_dim);
        let conv1_w = init::uniform_fan_in(&[l, l, 3, 3], l * 9, rng);
        let conv2_w = init::uniform_fan_in(&[l, l, 1, 1], l, rng);
        // Each higher capsule sums A predictions of d inputs each.
        let routing_w = init::uniform_fan_in(&[a, k, d, h], a * d, rng);
        let head = (spec.head == Head::Regression).then(|| RegressionHeadParams {
            w1: init::uniform_fan_in(&[k * h, REGRESSION_HIDDEN], k * h, rng),
            b1: Tensor::zeros(&[REGRESSION_HIDDEN]),
            w2: init::uniform_fan_in(&[REGRESSION_HIDDEN, 1], REGRESSION_HIDDEN, rng),
            b2: Tensor::zeros(&[1]),
        });
        Ok(Self {
            spec: spec.clone(),
            lstm,
            norms,
            conv1_w,
            conv1_b: Tensor::zeros(&[l]),
            conv2_w,
            conv2_b: Tensor::zeros(&[l]),
            routing_w,
            head,
        })
    }

    /// Tensors in their canonical order; names are stable across versions.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (layer, norm)) in self.lstm.iter().zip(&self.norms).enumerate() {
            out.push((format!("lstm{i}.w_ih"), &layer.w_ih));
            out.push((format!("lstm{i}.w_hh"), &layer.w_hh));
            out.push((format!("lstm{i}.bias"), &layer.bias));
            out.push((format!("norm{i}.gain"), &norm.gain));
            out.push((format!("norm{i}.bias"), &norm.bias));
        }
        out.push(("conv1.w".into(), &self.conv1_w));
        out.push(("conv1.b".into(), &self.conv1_b));
        out.push(("conv2.w".into(), &self.conv2_w));
        out.push(("conv2.b".into(), &self.conv2_b));
        out.push(("routing.w".into(), &self.routing_w));
        if let Some(h) = &self.head {
            out.push(("head.w1".into(), &h.w1));
            out.push(("head.b1".into(), &h.b1));
            out.push(("head.w2".into(), &h.w2));
            out.push(("head.b2".into(), &h.b2));
        }
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (layer, norm) in self.lstm.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut layer.w_ih);
            out.push(&mut layer.w_hh);
            out.push(&mut layer.bias);
            out.push(&mut norm.gain);
            out.push(&mut norm.bias);
        }
        out.push(&mut self.conv1_w);
        out.push(&mut self.conv1_b);
        out.push(&mut self.conv2_w);
        out.push(&mut self.conv2_b);
        out.push(&mut self.routing_w);
        if let Some(h) = &mut self.head {
            out.push(&mut h.w1);
            out.push(&mut h.b1);
            out.push(&mut h.w2);
            out.push(&mut h.b2);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers all tensors on `g`. With `trainable == false` the model is
    /// inference-only and receives no gradients.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let lstm = self.lstm.iter().map(|l| l.bind(g, trainable)).collect();
        let norms = self
            .norms
            .iter()
            .map(|n| (g.leaf(n.gain.clone(), trainable), g.leaf(n.bias.clone(), trainable)))
            .collect();
        let conv1_w = g.leaf(self.conv1_w.clone(), trainable);
        let conv1_b = g.leaf(self.conv1_b.clone(), trainable);
        let conv2_w = g.leaf(self.conv2_w.clone(), trainable);
        let conv2_b = g.leaf(self.conv2_b.clone(), trainable);
        let routing_w = g.leaf(self.routing_w.clone(), trainable);
        let head = self.head.as_ref().map(|h| {
            [
                g.leaf(h.w1.clone(), trainable),
                g.leaf(h.b1.clone(), trainable),
                g.leaf(h.w2.clone(), trainable),
                g.leaf(h.b2.clone(), trainable),
            ]
        });
        BoundModel {
            spec: self.spec.clone(),
            lstm,
            norms,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            routing_w,
            head,
        }
    }

    /// Rebuilds parameters from named tensors, checking every name and shape
    /// against `spec`.
    pub fn from_named(spec: &ArchSpec, tensors: NamedTensors) -> Result<Self, CapsError> {
        let mut params = Self::zeros(spec)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(CapsError::Mismatch(format!(
                "expected {} tensors, checkpoint has {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((slot, (name, shape)), (got_name, t)) in params.tensors_mut().into_iter().zip(&expected).zip(tensors) {
            if *name != got_name || shape.as_slice() != t.shape() {
                return Err(CapsError::Mismatch(format!(
                    "{name}: expected shape {shape:?}, checkpoint has {got_name} {:?}",
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    fn zeros(spec: &ArchSpec) -> Result<Self, CapsError> {
        spec.validate()?;
        let m = spec.hidden;
        let l = spec.windows;
        let (a, k, d, h) = (spec.lower_count(), spec.higher_count, spec.lower_dim(), spec.higher_dim);
        Ok(Self {
            spec: spec.clone(),
            lstm: (0..spec.lstm_layers)
                .map(|i| LstmLayer::zeros(if i == 0 { spec.features } else { m }, m))
                .collect(),
            norms: (0..spec.lstm_layers)
                .map(|_| LayerNormParams {
                    gain: Tensor::zeros(&[m]),
                    bias: Tensor::zeros(&[m]),
                })
                .collect(),
            conv1_w: Tensor::zeros(&[l, l, 3, 3]),
            conv1_b: Tensor::zeros(&[l]),
            conv2_w: Tensor::zeros(&[l, l, 1, 1]),
            conv2_b: Tensor::zeros(&[l]),
            routing_w: Tensor::zeros(&[a, k, d, h]),
            head: (spec.head == Head::Regression).then(|| RegressionHeadParams {
                w1: Tensor::zeros(&[k * h, REGRESSION_HIDDEN]),
                b1: Tensor::zeros(&[REGRESSION_HIDDEN]),
                w2: Tensor::zeros(&[REGRESSION_HIDDEN, 1]),
                b2: Tensor::zeros(&[1]),
            }),
        })
    }

    /// Writes an architecture block (`"ARCH"`, u32 length, JSON) followed by
    /// the named-tensor checkpoint.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CapsError> {
        let spec = serde_json::to_vec(&self.spec)?;
        w.write_all(b"ARCH")?;
        w.write_all(&(spec.len() as u32).to_le_bytes())?;
        w.write_all(&spec)?;
        let named: Vec<(String, Tensor)> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        write_checkpoint(w, &named)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, CapsError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ARCH" {
            return Err(CapsError::Mismatch("model checkpoint lacks an ARCH block".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut spec = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut spec)?;
        let spec: ArchSpec = serde_json::from_slice(&spec)?;
        let tensors = read_checkpoint(r)?;
        Self::from_named(&spec, tensors)
    }

    /// Loads a checkpoint and requires its architecture to equal `spec`.
    pub fn load_expecting<R: Read>(r: R, spec: &ArchSpec) -> Result<Self, CapsError> {
        let params = Self::load(r)?;
        if &params.spec != spec {
            return Err(CapsError::Mismatch(format!(
                "checkpoint architecture (layers {}, hidden {}, A {}, K {}, H {}, F {}) differs from configured (layers {}, hidden {}, A {}, K {}, H {}, F {})",
                params.spec.lstm_layers,
                params.spec.hidden,
                params.spec.lower_count(),
                params.spec.higher_count,
                params.spec.higher_dim,
                params.spec.features,
                spec.lstm_layers,
                spec.hidden,
                spec.lower_count(),
                spec.higher_count,
                spec.higher_dim,
                spec.features,
            )));
        }
        Ok(params)
    }
}

/// Graph handles for a [`ModelParams`], in the same order as its tensors.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub spec: ArchSpec,
    pub lstm: Vec<LstmVars>,
    pub norms: Vec<(Var, Var)>,
    pub conv1_w: Var,
    pub conv1_b: Var,
    pub conv2_w: Var,
    pub conv2_b: Var,
    pub routing_w: Var,
    pub head: Option<[Var; 4]>,
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (l, n) in self.lstm.iter().zip(&self.norms) {
            out.extend([l.w_ih, l.w_hh, l.bias, n.0, n.1]);
        }
        out.extend([self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.routing_w]);
        if let Some(h) = self.head {
            out.extend(h);
        }
        out
    }
}

/// Graph handles for one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Squashed lower capsules `[B, A, d]`.
    pub lower: Var,
    /// Higher capsules `[B, K, H]`.
    pub higher: Var,
    /// Final coupling `[B, A, K]`.
    pub coupling: Var,
    pub coupling_history: Vec<Var>,
    /// Capsule lengths `[B, K]`; the classification output.
    pub lengths: Var,
    /// Regression output `[B]` in (0, 1), present for regression heads.
    pub regression: Option<Var>,
}

/// Runs the network on `features [B, L, F]`.
pub fn forward(g: &mut Graph, features: Var, model: &BoundModel) -> Result<ForwardOutput, CapsError> {
    let spec = &model.spec;
    let s = g.shape(features).to_vec();
    if s.len() != 3 || s[1] != spec.windows || s[2] != spec.features {
        return Err(CapsError::Mismatch(format!(
            "features {s:?} do not match [B, {}, {}]",
            spec.windows, spec.features
        )));
    }
    let b = s[0];
    let (l, side) = (spec.windows, spec.side());

    let mut x = features;
    for (lstm, &(gain, bias)) in model.lstm.iter().zip(&model.norms) {
        x = lstm_forward(g, x, lstm)?;
        x = g.layer_norm(x, gain, bias)?;
        x = g.leaky_relu(x, LEAKY_SLOPE)?;
    }

    // One sqrt(M) x sqrt(M) map per window, windows as channels.
    let maps = g.reshape(x, &[b, l, side, side])?;
    let local = g.conv2d(maps, model.conv1_w, model.conv1_b, 1)?;
    let local = g.leaky_relu(local, LEAKY_SLOPE)?;
    let caps = g.conv2d(local, model.conv2_w, model.conv2_b, 1)?;

    // Split the L channels at each position into C groups of d = L / C.
    let (c, d, p) = (spec.groups, spec.lower_dim(), spec.positions());
    let caps = g.reshape(caps, &[b * c, d, p])?;
    let caps = g.transpose_last2(caps)?;
    let caps = g.reshape(caps, &[b, c * p, d])?;
    let lower = g.squash(caps)?;

    let u_hat = g.caps_predict(lower, model.routing_w)?;
    let routing = route(g, u_hat, spec.routing_iters)?;
    let lengths = g.norm_last(routing.higher)?;

    let regression = match model.head {
        Some([w1, b1, w2, b2]) => {
            let flat = g.reshape(routing.higher, &[b, spec.higher_count * spec.higher_dim])?;
            let hidden = g.matmul(flat, w1)?;
            let hidden = g.add_row(hidden, b1)?;
            let hidden = g.sigmoid(hidden)?;
            let out = g.matmul(hidden, w2)?;
            let out = g.add_row(out, b2)?;
            let out = g.sigmoid(out)?;
            Some(g.reshape(out, &[b])?)
        }
        None => None,
    };

    Ok(ForwardOutput {
        lower,
        higher: routing.higher,
        coupling: routing.coupling,
        coupling_history: routing.history,
        lengths,
        regression,
    })
}

/// Predicted class per example: the index of the longest higher capsule.
pub fn predict_classes(lengths: &Tensor) -> Vec<usize> {
    let k = *lengths.shape().last().unwrap_or(&1);
    lengths
        .data()
        .chunks(k)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
