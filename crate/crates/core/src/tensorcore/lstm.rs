// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use super::{init, Graph, Tensor, TensorError, Var};

/// Weights of one LSTM layer. Gate blocks along the `4M` axis are ordered
/// input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmLayer {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: init::uniform_fan_in(&[input, 4 * hidden], input, rng),
            w_hh: init::uniform_fan_in(&[hidden, 4 * hidden], hidden, rng),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[input, 4 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.bias.len()
    }

    /// Registers the weights on `g`; `trainable` controls gradient tracking.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LstmVars {
        LstmVars {
            w_ih: g.leaf(self.w_ih.clone(), trainable),
            w_hh: g.leaf(self.w_hh.clone(), trainable),
            bias: g.leaf(self.bias.clone(), trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Runs an LSTM over `seq [B, L, F]` from zero hidden and cell state and
/// returns every step's hidden output as `[B, L, M]`.
pub fn lstm_forward(g: &mut Graph, seq: Var, p: &LstmVars) -> Result<Var, TensorError> {
    let s = g.shape(seq).to_vec();
    if s.len() != 3 {
        return Err(TensorError::InvalidArgument(format!("lstm expects [B, L, F], got {s:?}")));
    }
    let (b, l, f) = (s[0], s[1], s[2]);
    let w_shape = g.shape(p.w_ih).to_vec();
    if w_shape[0] != f {
        return Err(TensorError::ShapeMismatch {
            op: "lstm input",
            left: s,
            right: w_shape,
        });
    }
    let m = g.shape(p.w_hh)[0];

    // Input projections for all steps in one product.
    let flat = g.reshape(seq, &[b * l, f])?;
    let proj = g.matmul(flat, p.w_ih)?;
    let proj = g.reshape(proj, &[b, l, 4 * m])?;

    let mut h = g.constant(Tensor::zeros(&[b, m]));
    let mut c = g.constant(Tensor::zeros(&[b, m]));
    let mut outputs = Vec::with_capacity(l);
    for t in 0..l {
        let x_t = g.select_time(proj, t)?;
        let rec = g.matmul(h, p.w_hh)?;
        let z = g.add(x_t, rec)?;
        let z = g.add_row(z, p.bias)?;
        let i_pre = g.slice_last(z, 0, m)?;
        let f_pre = g.slice_last(z, m, m)?;
        let g_pre = g.slice_last(z, 2 * m, m)?;
        let o_pre = g.slice_last(z, 3 * m, m)?;
        let i_gate = g.sigmoid(i_pre)?;
        let f_gate = g.sigmoid(f_pre)?;
        let cand = g.tanh(g_pre)?;
        let o_gate = g.sigmoid(o_pre)?;
        let keep = g.mul(f_gate, c)?;
        let write = g.mul(i_gate, cand)?;
        c = g.add(keep, write)?;
        let c_act = g.tanh(c)?;
        h = g.mul(o_gate, c_act)?;
        outputs.push(h);
    }
    g.stack_time(&outputs)
}
