// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep that visits
//! every node once. A `Graph` is single-owner; independent graphs can be
//! driven from different threads.

use super::{Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    L2Norm(Var),
    NormLast(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Squash(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    TransposeLast2(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    SelectTime {
        x: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    CapsPredict(Var, Var),
    CapsWeightedSum(Var, Var),
    CapsAgreement(Var, Var),
    BatchGram(Var),
    NormalizeRows {
        x: Var,
        row_len: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// `c (+)= op(a) * op(b)` for row-major operands; `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements checked by the debug assertions, all within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn squash_factor(norm: f64) -> f64 {
    norm / (1.0 + norm * norm)
}

fn squash_factor_deriv(norm: f64) -> f64 {
    let d = 1.0 + norm * norm;
    (1.0 - norm * norm) / (d * d)
}

fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let p = ho * wo;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oi in 0..ho {
                    for oj in 0..wo {
                        let xi = oi * stride + ki;
                        let xj = oj * stride + kj;
                        cols[row * p + oi * wo + oj] = x[(c * h + xi) * w + xj];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    gx: &mut [f64],
) {
    let p = ho * wo;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for oi in 0..ho {
                    for oj in 0..wo {
                        let xi = oi * stride + ki;
                        let xj = oj * stride + kj;
                        gx[(c * h + xi) * w + xj] += cols[row * p + oi * wo + oj];
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last `backward`, if the node received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref()).map(|g| {
            Tensor::new(self.nodes[v.0].value.shape(), g.clone())
                .expect("gradient buffer matches value shape")
        })
    }

    /// Gradient of `v`, or zeros when no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(TensorError::NonFinite(op_name(&op)));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary_map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    /// Leaf node; `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` with the gradient path cut.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn zip(&mut self, opname: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, TensorError> {
        self.check_same_shape(opname, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`n` vector to every row of a tensor whose last axis is `n`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let n = last_dim(self.shape(a));
        if self.shape(bias) != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a, bias]);
        self.push(value, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary_map(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::InvalidArgument("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Reduces the last axis by summation.
    pub fn sum_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        let data: Vec<f64> = self.value(x).data().chunks(n).map(|r| r.iter().sum()).collect();
        let out_shape = &shape[..shape.len().saturating_sub(1)];
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::SumLast(x), rg)
    }

    /// Euclidean norm of the whole tensor.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(n), Op::L2Norm(x), rg)
    }

    /// Euclidean norm along the last axis.
    pub fn norm_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(&shape[..shape.len().saturating_sub(1)], data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::NormLast(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.unary_map(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary_map(x, Op::Square(x), |v| v * v)
    }

    fn rowwise(&mut self, x: Var, op: Op, f: impl Fn(&[f64], &mut [f64])) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        if n > 0 {
            for (r, o) in src.chunks(n).zip(out.chunks_mut(n)) {
                f(r, o);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    /// Softmax along the last axis, stabilized by max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.rowwise(x, Op::Softmax(x), |r, o| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (oi, &ri) in o.iter_mut().zip(r) {
                *oi = (ri - m).exp();
                z += *oi;
            }
            o.iter_mut().for_each(|v| *v /= z);
        })
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.rowwise(x, Op::LogSoftmax(x), |r, o| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (oi, &ri) in o.iter_mut().zip(r) {
                *oi = ri - lse;
            }
        })
    }

    /// Capsule nonlinearity along the last axis: `s * |s| / (1 + |s|^2)`.
    pub fn squash(&mut self, x: Var) -> Result<Var, TensorError> {
        self.rowwise(x, Op::Squash(x), |r, o| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let f = squash_factor(norm);
            for (oi, &ri) in o.iter_mut().zip(r) {
                *oi = f * ri;
            }
        })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / n.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for (ri, r) in src.chunks(n).enumerate() {
            let mu = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[ri] = is;
            for j in 0..n {
                let xh = (r[j] - mu) * is;
                xhat[ri * n + j] = xh;
                out[ri * n + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::InvalidArgument(format!(
                "transpose_last2 needs at least 2 axes, got {shape:?}"
            )));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (blk_in, blk_out) in src.chunks(r * c).zip(out.chunks_mut(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    blk_out[j * r + i] = blk_in[i * c + j];
                }
            }
        }
        let mut new_shape = shape.clone();
        let l = new_shape.len();
        new_shape.swap(l - 2, l - 1);
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::TransposeLast2(x), rg)
    }

    /// Valid (unpadded) 2-D convolution.
    ///
    /// `input` is `[B, C_in, H, W]`, `weight` is `[C_out, C_in, k, k]`,
    /// `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var, TensorError> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: si.clone(),
            right: sw.clone(),
        };
        if si.len() != 4 || sw.len() != 4 || sw[1] != si[1] || sw[2] != sw[3] || stride == 0 {
            return Err(mismatch());
        }
        if self.shape(bias) != [sw[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: sw.clone(),
                right: self.shape(bias).to_vec(),
            });
        }
        let (b, c_in, h, w) = (si[0], si[1], si[2], si[3]);
        let (c_out, k) = (sw[0], sw[2]);
        if k > h || k > w {
            return Err(TensorError::InvalidArgument(format!(
                "conv2d kernel {k}x{k} larger than input {h}x{w}"
            )));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let p = ho * wo;
        let ck = c_in * k * k;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut out = vec![0.0; b * c_out * p];
        let mut cols = vec![0.0; ck * p];
        for bi in 0..b {
            im2col(&x[bi * c_in * h * w..(bi + 1) * c_in * h * w], c_in, h, w, k, stride, ho, wo, &mut cols);
            let o = &mut out[bi * c_out * p..(bi + 1) * c_out * p];
            for (co, row) in o.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = bs[co]);
            }
            gemm(c_out, ck, p, wt, false, &cols, false, o, true);
        }
        let value = Tensor::new(&[b, c_out, ho, wo], out)?;
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            },
            rg,
        )
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = last_dim(&shape);
        if start + len > n {
            return Err(TensorError::InvalidArgument(format!(
                "slice [{start}, {}) out of range for last axis {n}",
                start + len
            )));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-scalar") = len;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::SliceLast { x, start }, rg)
    }

    /// Picks step `t` from a `[B, L, F]` sequence, giving `[B, F]`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || t >= shape[1] {
            return Err(TensorError::InvalidArgument(format!(
                "select_time step {t} on shape {shape:?}"
            )));
        }
        let (b, l, f) = (shape[0], shape[1], shape[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * f);
        for bi in 0..b {
            let off = (bi * l + t) * f;
            out.extend_from_slice(&src[off..off + f]);
        }
        let value = Tensor::new(&[b, f], out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::SelectTime { x, t }, rg)
    }

    /// Stacks `L` tensors of shape `[B, M]` into `[B, L, M]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var, TensorError> {
        let first = *steps
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("stack_time of nothing".into()))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 {
            return Err(TensorError::InvalidArgument(format!("stack_time expects [B, M], got {s0:?}")));
        }
        for &s in steps {
            self.check_same_shape("stack_time", first, s)?;
        }
        let (b, m, l) = (s0[0], s0[1], steps.len());
        let mut out = vec![0.0; b * l * m];
        for (t, &s) in steps.iter().enumerate() {
            let src = self.value(s).data();
            for bi in 0..b {
                out[(bi * l + t) * m..(bi * l + t + 1) * m].copy_from_slice(&src[bi * m..(bi + 1) * m]);
            }
        }
        let value = Tensor::new(&[b, l, m], out)?;
        let rg = self.rg(steps);
        self.push(value, Op::StackTime(steps.to_vec()), rg)
    }

    /// Prediction vectors: `u [B, A, d]` times per-pair `W [A, K, d, H]`
    /// gives `u_hat [B, A, K, H]` with `u_hat[b,i,j] = u[b,i] . W[i,j]`.
    pub fn caps_predict(&mut self, u: Var, w: Var) -> Result<Var, TensorError> {
        let su = self.shape(u).to_vec();
        let sw = self.shape(w).to_vec();
        if su.len() != 3 || sw.len() != 4 || su[1] != sw[0] || su[2] != sw[2] {
            return Err(TensorError::ShapeMismatch {
                op: "caps_predict",
                left: su,
                right: sw,
            });
        }
        let (b, a, d) = (su[0], su[1], su[2]);
        let (k, h) = (sw[1], sw[3]);
        let ud = self.value(u).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; b * a * k * h];
        for bi in 0..b {
            for i in 0..a {
                let urow = &ud[(bi * a + i) * d..(bi * a + i + 1) * d];
                for j in 0..k {
                    let o = &mut out[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                    let wblk = &wd[(i * k + j) * d * h..(i * k + j + 1) * d * h];
                    for (e, &ue) in urow.iter().enumerate() {
                        let wr = &wblk[e * h..(e + 1) * h];
                        for (ov, wv) in o.iter_mut().zip(wr) {
                            *ov += ue * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[b, a, k, h], out)?;
        let rg = self.rg(&[u, w]);
        self.push(value, Op::CapsPredict(u, w), rg)
    }

    /// `s[b,j] = sum_i c[b,i,j] * u_hat[b,i,j]` for `c [B, A, K]`.
    pub fn caps_weighted_sum(&mut self, c: Var, u_hat: Var) -> Result<Var, TensorError> {
        let sc = self.shape(c).to_vec();
        let su = self.shape(u_hat).to_vec();
        if sc.len() != 3 || su.len() != 4 || sc[..] != su[..3] {
            return Err(TensorError::ShapeMismatch {
                op: "caps_weighted_sum",
                left: sc,
                right: su,
            });
        }
        let (b, a, k, h) = (su[0], su[1], su[2], su[3]);
        let cd = self.value(c).data();
        let ud = self.value(u_hat).data();
        let mut out = vec![0.0; b * k * h];
        for bi in 0..b {
            for i in 0..a {
                for j in 0..k {
                    let cij = cd[(bi * a + i) * k + j];
                    let ur = &ud[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                    let o = &mut out[(bi * k + j) * h..(bi * k + j + 1) * h];
                    for (ov, uv) in o.iter_mut().zip(ur) {
                        *ov += cij * uv;
                    }
                }
            }
        }
        let value = Tensor::new(&[b, k, h], out)?;
        let rg = self.rg(&[c, u_hat]);
        self.push(value, Op::CapsWeightedSum(c, u_hat), rg)
    }

    /// Agreement `u_hat[b,i,j] . v[b,j]`, shape `[B, A, K]`.
    pub fn caps_agreement(&mut self, u_hat: Var, v: Var) -> Result<Var, TensorError> {
        let su = self.shape(u_hat).to_vec();
        let sv = self.shape(v).to_vec();
        if su.len() != 4 || sv.len() != 3 || su[0] != sv[0] || su[2] != sv[1] || su[3] != sv[2] {
            return Err(TensorError::ShapeMismatch {
                op: "caps_agreement",
                left: su,
                right: sv,
            });
        }
        let (b, a, k, h) = (su[0], su[1], su[2], su[3]);
        let ud = self.value(u_hat).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; b * a * k];
        for bi in 0..b {
            for i in 0..a {
                for j in 0..k {
                    let ur = &ud[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                    let vr = &vd[(bi * k + j) * h..(bi * k + j + 1) * h];
                    out[(bi * a + i) * k + j] = ur.iter().zip(vr).map(|(x, y)| x * y).sum();
                }
            }
        }
        let value = Tensor::new(&[b, a, k], out)?;
        let rg = self.rg(&[u_hat, v]);
        self.push(value, Op::CapsAgreement(u_hat, v), rg)
    }

    /// Per-example Gram `u^T u` for `u [B, A, d]`, giving `[B, d, d]`.
    pub fn batch_gram(&mut self, u: Var) -> Result<Var, TensorError> {
        let su = self.shape(u).to_vec();
        if su.len() != 3 {
            return Err(TensorError::InvalidArgument(format!("batch_gram expects [B, A, d], got {su:?}")));
        }
        let (b, a, d) = (su[0], su[1], su[2]);
        let ud = self.value(u).data();
        let mut out = vec![0.0; b * d * d];
        for bi in 0..b {
            gemm(
                d,
                a,
                d,
                &ud[bi * a * d..(bi + 1) * a * d],
                true,
                &ud[bi * a * d..(bi + 1) * a * d],
                false,
                &mut out[bi * d * d..(bi + 1) * d * d],
                false,
            );
        }
        let value = Tensor::new(&[b, d, d], out)?;
        let rg = self.rg(&[u]);
        self.push(value, Op::BatchGram(u), rg)
    }

    /// Scales each contiguous run of `row_len` values to unit L2 norm.
    /// All-zero runs pass through unchanged.
    pub fn normalize_rows(&mut self, x: Var, row_len: usize) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if row_len == 0 || n % row_len != 0 {
            return Err(TensorError::InvalidArgument(format!(
                "normalize_rows: {n} values not divisible into rows of {row_len}"
            )));
        }
        let mut out = self.value(x).data().to_vec();
        for r in out.chunks_mut(row_len) {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::NormalizeRows { x, row_len }, rg)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every node that
    /// requires a gradient. Gradients from an earlier call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let out = node.value.data();
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let add_elementwise = |buf: &mut [f64], f: &dyn Fn(usize) -> f64| {
            for (j, b) in buf.iter_mut().enumerate() {
                *b += f(j);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                acc(*a, &mut |buf| gemm(m, n, k, g, false, val(*b), true, buf, true));
                acc(*b, &mut |buf| gemm(k, m, n, val(*a), true, g, false, buf, true));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_elementwise(buf, &|j| g[j]));
                acc(*b, &mut |buf| add_elementwise(buf, &|j| g[j]));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| add_elementwise(buf, &|j| g[j]));
                acc(*b, &mut |buf| add_elementwise(buf, &|j| -g[j]));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |buf| add_elementwise(buf, &|j| g[j] * bv[j]));
                acc(*b, &mut |buf| add_elementwise(buf, &|j| g[j] * av[j]));
            }
            Op::AddRow(a, bias) => {
                let n = shp(*bias)[0];
                acc(*a, &mut |buf| add_elementwise(buf, &|j| g[j]));
                acc(*bias, &mut |buf| {
                    for row in g.chunks(n) {
                        for (b, r) in buf.iter_mut().zip(row) {
                            *b += r;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |buf| add_elementwise(buf, &|j| c * g[j])),
            Op::AddScalar(x) => acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j])),
            Op::Sum(x) => acc(*x, &mut |buf| add_elementwise(buf, &|_| g[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |buf| add_elementwise(buf, &|_| g[0] / n));
            }
            Op::SumLast(x) => {
                let n = last_dim(shp(*x));
                acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j / n]));
            }
            Op::L2Norm(x) => {
                let xv = val(*x);
                let norm = out[0];
                if norm > 0.0 {
                    acc(*x, &mut |buf| add_elementwise(buf, &|j| g[0] * xv[j] / norm));
                }
            }
            Op::NormLast(x) => {
                let xv = val(*x);
                let n = last_dim(shp(*x));
                acc(*x, &mut |buf| {
                    add_elementwise(buf, &|j| {
                        let norm = out[j / n];
                        if norm > 0.0 {
                            g[j / n] * xv[j] / norm
                        } else {
                            0.0
                        }
                    })
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j] * out[j] * (1.0 - out[j]))),
            Op::Tanh(x) => acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j] * (1.0 - out[j] * out[j]))),
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x);
                acc(*x, &mut |buf| add_elementwise(buf, &|j| if xv[j] > 0.0 { g[j] } else { slope * g[j] }));
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| add_elementwise(buf, &|j| if xv[j] > 0.0 { g[j] } else { 0.0 }));
            }
            Op::Exp(x) => acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j] * out[j])),
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j] / xv[j]));
            }
            Op::Square(x) => {
                let xv = val(*x);
                acc(*x, &mut |buf| add_elementwise(buf, &|j| 2.0 * xv[j] * g[j]));
            }
            Op::Softmax(x) => {
                let n = last_dim(shp(*x));
                acc(*x, &mut |buf| {
                    for ((b, y), gr) in buf.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = y.iter().zip(gr).map(|(a, c)| a * c).sum();
                        for j in 0..n {
                            b[j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let n = last_dim(shp(*x));
                acc(*x, &mut |buf| {
                    for ((b, y), gr) in buf.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let gs: f64 = gr.iter().sum();
                        for j in 0..n {
                            b[j] += gr[j] - y[j].exp() * gs;
                        }
                    }
                });
            }
            Op::Squash(x) => {
                let n = last_dim(shp(*x));
                let xv = val(*x);
                acc(*x, &mut |buf| {
                    for ((b, s), gr) in buf.chunks_mut(n).zip(xv.chunks(n)).zip(g.chunks(n)) {
                        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let f = squash_factor(norm);
                        let coef = squash_factor_deriv(norm) / norm;
                        let dot: f64 = s.iter().zip(gr).map(|(a, c)| a * c).sum();
                        for j in 0..n {
                            b[j] += f * gr[j] + coef * dot * s[j];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = shp(*gain)[0];
                let gv = val(*gain);
                acc(*bias, &mut |buf| {
                    for row in g.chunks(n) {
                        for (b, r) in buf.iter_mut().zip(row) {
                            *b += r;
                        }
                    }
                });
                acc(*gain, &mut |buf| {
                    for (row, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            buf[j] += row[j] * xr[j];
                        }
                    }
                });
                acc(*x, &mut |buf| {
                    for (ri, ((b, row), xr)) in buf.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..n {
                            let gx = row[j] * gv[j];
                            m1 += gx;
                            m2 += gx * xr[j];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for j in 0..n {
                            b[j] += inv_std[ri] * (row[j] * gv[j] - m1 - xr[j] * m2);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |buf| add_elementwise(buf, &|j| g[j])),
            Op::TransposeLast2(x) => {
                let s = shp(*x);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                acc(*x, &mut |buf| {
                    for (bb, gb) in buf.chunks_mut(r * c).zip(g.chunks(r * c)) {
                        for i in 0..r {
                            for j in 0..c {
                                bb[i * c + j] += gb[j * r + i];
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let si = shp(*input);
                let sw = shp(*weight);
                let (b, c_in, h, w) = (si[0], si[1], si[2], si[3]);
                let (c_out, k) = (sw[0], sw[2]);
                let so = node.value.shape();
                let (ho, wo) = (so[2], so[3]);
                let p = ho * wo;
                let ck = c_in * k * k;
                let xv = val(*input);
                let wv = val(*weight);
                acc(*bias, &mut |buf| {
                    for bi in 0..b {
                        for (co, bv) in buf.iter_mut().enumerate() {
                            *bv += g[(bi * c_out + co) * p..(bi * c_out + co + 1) * p].iter().sum::<f64>();
                        }
                    }
                });
                let mut cols = vec![0.0; ck * p];
                if nodes[weight.0].requires_grad {
                    acc(*weight, &mut |buf| {
                        for bi in 0..b {
                            im2col(&xv[bi * c_in * h * w..(bi + 1) * c_in * h * w], c_in, h, w, k, *stride, ho, wo, &mut cols);
                            gemm(c_out, p, ck, &g[bi * c_out * p..(bi + 1) * c_out * p], false, &cols, true, buf, true);
                        }
                    });
                }
                acc(*input, &mut |buf| {
                    for bi in 0..b {
                        gemm(ck, c_out, p, wv, true, &g[bi * c_out * p..(bi + 1) * c_out * p], false, &mut cols, false);
                        col2im_add(&cols, c_in, h, w, k, *stride, ho, wo, &mut buf[bi * c_in * h * w..(bi + 1) * c_in * h * w]);
                    }
                });
            }
            Op::SliceLast { x, start } => {
                let n = last_dim(shp(*x));
                let len = last_dim(node.value.shape());
                acc(*x, &mut |buf| {
                    for (b, gr) in buf.chunks_mut(n).zip(g.chunks(len)) {
                        for (bv, gv) in b[*start..*start + len].iter_mut().zip(gr) {
                            *bv += gv;
                        }
                    }
                });
            }
            Op::SelectTime { x, t } => {
                let s = shp(*x);
                let (l, f) = (s[1], s[2]);
                acc(*x, &mut |buf| {
                    for (bi, gr) in g.chunks(f).enumerate() {
                        let off = (bi * l + t) * f;
                        for (bv, gv) in buf[off..off + f].iter_mut().zip(gr) {
                            *bv += gv;
                        }
                    }
                });
            }
            Op::StackTime(steps) => {
                let s = node.value.shape();
                let (b, l, m) = (s[0], s[1], s[2]);
                for (t, &sv) in steps.iter().enumerate() {
                    acc(sv, &mut |buf| {
                        for bi in 0..b {
                            let off = (bi * l + t) * m;
                            for (bv, gv) in buf[bi * m..(bi + 1) * m].iter_mut().zip(&g[off..off + m]) {
                                *bv += gv;
                            }
                        }
                    });
                }
            }
            Op::CapsPredict(u, w) => {
                let su = shp(*u);
                let sw = shp(*w);
                let (b, a, d) = (su[0], su[1], su[2]);
                let (k, h) = (sw[1], sw[3]);
                let (uv, wv) = (val(*u), val(*w));
                acc(*u, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..k {
                                let gr = &g[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                let wblk = &wv[(i * k + j) * d * h..(i * k + j + 1) * d * h];
                                for e in 0..d {
                                    buf[(bi * a + i) * d + e] +=
                                        wblk[e * h..(e + 1) * h].iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc(*w, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            let urow = &uv[(bi * a + i) * d..(bi * a + i + 1) * d];
                            for j in 0..k {
                                let gr = &g[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                let wblk = &mut buf[(i * k + j) * d * h..(i * k + j + 1) * d * h];
                                for (e, &ue) in urow.iter().enumerate() {
                                    for (wv, gv) in wblk[e * h..(e + 1) * h].iter_mut().zip(gr) {
                                        *wv += ue * gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::CapsWeightedSum(c, u_hat) => {
                let su = shp(*u_hat);
                let (b, a, k, h) = (su[0], su[1], su[2], su[3]);
                let (cv, uv) = (val(*c), val(*u_hat));
                acc(*c, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..k {
                                let ur = &uv[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                let gr = &g[(bi * k + j) * h..(bi * k + j + 1) * h];
                                buf[(bi * a + i) * k + j] += ur.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                });
                acc(*u_hat, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..k {
                                let cij = cv[(bi * a + i) * k + j];
                                let gr = &g[(bi * k + j) * h..(bi * k + j + 1) * h];
                                let br = &mut buf[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                for (bv, gv) in br.iter_mut().zip(gr) {
                                    *bv += cij * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::CapsAgreement(u_hat, v) => {
                let su = shp(*u_hat);
                let (b, a, k, h) = (su[0], su[1], su[2], su[3]);
                let (uv, vv) = (val(*u_hat), val(*v));
                acc(*u_hat, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..k {
                                let gij = g[(bi * a + i) * k + j];
                                let vr = &vv[(bi * k + j) * h..(bi * k + j + 1) * h];
                                let br = &mut buf[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                for (bv, x) in br.iter_mut().zip(vr) {
                                    *bv += gij * x;
                                }
                            }
                        }
                    }
                });
                acc(*v, &mut |buf| {
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..k {
                                let gij = g[(bi * a + i) * k + j];
                                let ur = &uv[((bi * a + i) * k + j) * h..((bi * a + i) * k + j + 1) * h];
                                let br = &mut buf[(bi * k + j) * h..(bi * k + j + 1) * h];
                                for (bv, x) in br.iter_mut().zip(ur) {
                                    *bv += gij * x;
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchGram(u) => {
                let su = shp(*u);
                let (b, a, d) = (su[0], su[1], su[2]);
                let uv = val(*u);
                acc(*u, &mut |buf| {
                    let mut sym = vec![0.0; d * d];
                    for bi in 0..b {
                        let gb = &g[bi * d * d..(bi + 1) * d * d];
                        for r in 0..d {
                            for c in 0..d {
                                sym[r * d + c] = gb[r * d + c] + gb[c * d + r];
                            }
                        }
                        gemm(a, d, d, &uv[bi * a * d..(bi + 1) * a * d], false, &sym, false, &mut buf[bi * a * d..(bi + 1) * a * d], true);
                    }
                });
            }
            Op::NormalizeRows { x, row_len } => {
                let xv = val(*x);
                let n = *row_len;
                acc(*x, &mut |buf| {
                    for ((b, xr), (yr, gr)) in buf.chunks_mut(n).zip(xv.chunks(n)).zip(out.chunks(n).zip(g.chunks(n))) {
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            for (bv, gv) in b.iter_mut().zip(gr) {
                                *bv += gv;
                            }
                            continue;
                        }
                        let dot: f64 = yr.iter().zip(gr).map(|(a, c)| a * c).sum();
                        for j in 0..n {
                            b[j] += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                });
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SumLast(..) => "sum_last",
        Op::L2Norm(..) => "l2_norm",
        Op::NormLast(..) => "norm_last",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Relu(..) => "relu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Square(..) => "square",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::Squash(..) => "squash",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Reshape(..) => "reshape",
        Op::TransposeLast2(..) => "transpose_last2",
        Op::Conv2d { .. } => "conv2d",
        Op::SliceLast { .. } => "slice_last",
        Op::SelectTime { .. } => "select_time",
        Op::StackTime(..) => "stack_time",
        Op::CapsPredict(..) => "caps_predict",
        Op::CapsWeightedSum(..) => "caps_weighted_sum",
        Op::CapsAgreement(..) => "caps_agreement",
        Op::BatchGram(..) => "batch_gram",
        Op::NormalizeRows { .. } => "normalize_rows",
    }
}
