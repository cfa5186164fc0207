//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations execute eagerly and are appended to the tape, so node order is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and accumulates gradients into the node buffers and into a
//! [`Gradients`] set aligned with the borrowed [`ParamSet`].

use std::collections::HashMap;

use super::tensor::{dims2, matmul_into};
use super::{Gradients, NumericError, ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Zero padding of `kernel / 2` on every side.
    Same,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    node_grads: Option<Vec<Option<Tensor>>>,
    param_grads: Option<Gradients>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            node_grads: None,
            param_grads: None,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.node_grads = None;
        self.param_grads = None;
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, NumericError> {
        let id = self.params.require(name)?;
        Ok(self.param(id))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericError {
        NumericError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.value(a).matmul(self.value(b)).map_err(|e| match e {
            NumericError::ShapeMismatch { .. } => self.mismatch("matmul", a, b),
            other => other,
        })?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// 2-D convolution (cross-correlation) of a `[C, H, W]` input with an
    /// `[O, C, KH, KW]` kernel and optional `[O]` bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, NumericError> {
        let (c, h, w) = match self.value(input).shape() {
            [c, h, w] => (*c, *h, *w),
            s => {
                return Err(NumericError::Rank {
                    op: "conv2d",
                    expected: 3,
                    shape: s.to_vec(),
                })
            }
        };
        let (o, kc, kh, kw) = match self.value(kernel).shape() {
            [o, kc, kh, kw] => (*o, *kc, *kh, *kw),
            s => {
                return Err(NumericError::Rank {
                    op: "conv2d",
                    expected: 4,
                    shape: s.to_vec(),
                })
            }
        };
        if kc != c || stride == 0 {
            return Err(self.mismatch("conv2d", input, kernel));
        }
        if let Some(b) = bias {
            if self.value(b).len() != o {
                return Err(self.mismatch("conv2d bias", kernel, b));
            }
        }
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => kh / 2,
        };
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(self.mismatch("conv2d", input, kernel));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            if let Some(b) = bias {
                let bv = self.value(b).data()[oc];
                plane.iter_mut().for_each(|v| *v = bv);
            }
            for ic in 0..c {
                let xin = &x[ic * h * w..(ic + 1) * h * w];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = k[((oc * c + ic) * kh + ki) * kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        conv_accumulate(
                            plane, xin, wv, (h, w), (oh, ow), (ki, kj), stride, pad,
                        );
                    }
                }
            }
        }
        let out = Tensor::new(vec![o, oh, ow], out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            out,
        ))
    }

    /// Max pooling over `[C, H, W]` with a square window; trailing rows and
    /// columns that do not fill a window are dropped. Ties go to the first
    /// maximum in row-major window order.
    pub fn max_pool2d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var, NumericError> {
        let (c, h, w) = match self.value(input).shape() {
            [c, h, w] => (*c, *h, *w),
            s => {
                return Err(NumericError::Rank {
                    op: "max_pool2d",
                    expected: 3,
                    shape: s.to_vec(),
                })
            }
        };
        if size == 0 || stride == 0 || h < size || w < size {
            return Err(NumericError::ShapeMismatch {
                op: "max_pool2d",
                left: vec![c, h, w],
                right: vec![size, size],
            });
        }
        let oh = (h - size) / stride + 1;
        let ow = (w - size) / stride + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let out = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2d { input, argmax }, out))
    }

    /// Adds a `[n]` (or `[1, n]`) bias to every length-`n` row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericError> {
        let n = self.value(bias).len();
        let xv = self.value(x);
        if n == 0 || xv.shape().last() != Some(&n) {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let mut out = xv.clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = scale * *v + shift);
        self.push(Op::Affine { input: x, scale }, out)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        self.push(Op::Square(x), out)
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = *parts.first().ok_or(NumericError::EmptyInput("concat"))?;
        let (rows, _) = dims2(self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.value(p))?;
            if r != rows {
                return Err(self.mismatch("concat", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericError> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    /// `-log softmax(logits)[label]` with max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NumericError> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(NumericError::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        let probs = softmax(z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let loss = log_sum - z[label];
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&mut self, output: Var) -> Result<(), NumericError> {
        if output.0 >= self.nodes.len() {
            return Err(NumericError::BackwardNotRun);
        }
        let out_shape = self.value(output).shape().to_vec();
        if self.value(output).len() != 1 {
            return Err(NumericError::NotScalar(out_shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads = Gradients::zeros_like(self.params);
        grads[output.0] = Some(Tensor::full(&out_shape, 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &mut param_grads);
            grads[i] = Some(g);
        }
        self.node_grads = Some(grads);
        self.param_grads = Some(param_grads);
        Ok(())
    }

    /// Gradient of the last `backward` output with respect to `v`
    /// (zeros when `v` does not reach the output).
    pub fn grad(&self, v: Var) -> Result<Tensor, NumericError> {
        let grads = self.node_grads.as_ref().ok_or(NumericError::BackwardNotRun)?;
        Ok(grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape())))
    }

    pub fn param_grads(&self) -> Result<&Gradients, NumericError> {
        self.param_grads.as_ref().ok_or(NumericError::BackwardNotRun)
    }

    pub fn into_param_grads(self) -> Result<Gradients, NumericError> {
        self.param_grads.ok_or(NumericError::BackwardNotRun)
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut Gradients,
    ) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => param_grads.get_mut(*id).add_scaled(g, 1.0),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = dC * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let g_row = &gd[r * n..(r + 1) * n];
                    for p in 0..k {
                        let b_row = &bv.data()[p * n..(p + 1) * n];
                        da[r * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = A^T * dC
                let mut db = vec![0.0; k * n];
                let mut at = vec![0.0; k * m];
                for r in 0..m {
                    for p in 0..k {
                        at[p * m + r] = av.data()[r * k + p];
                    }
                }
                matmul_into(&at, gd, &mut db, k, m, n);
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (xv, kv) = (self.value(*input), self.value(*kernel));
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (o, kh, kw) = (kv.shape()[0], kv.shape()[2], kv.shape()[3]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let mut dx = vec![0.0; c * h * w];
                let mut dk = vec![0.0; o * c * kh * kw];
                for oc in 0..o {
                    let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
                    for ic in 0..c {
                        let xin = &xv.data()[ic * h * w..(ic + 1) * h * w];
                        let dxin = &mut dx[ic * h * w..(ic + 1) * h * w];
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let widx = ((oc * c + ic) * kh + ki) * kw + kj;
                                let wv = kv.data()[widx];
                                dk[widx] += conv_backward(
                                    gplane,
                                    xin,
                                    dxin,
                                    wv,
                                    (h, w),
                                    (oh, ow),
                                    (ki, kj),
                                    *stride,
                                    *pad,
                                );
                            }
                        }
                    }
                }
                accumulate(grads, *input, xv.shape(), dx);
                accumulate(grads, *kernel, kv.shape(), dk);
                if let Some(b) = bias {
                    let db = (0..o)
                        .map(|oc| gd[oc * oh * ow..(oc + 1) * oh * ow].iter().sum())
                        .collect();
                    accumulate(grads, *b, self.value(*b).shape(), db);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let xv = self.value(*input);
                let mut dx = vec![0.0; xv.len()];
                for (gv, &src) in gd.iter().zip(argmax) {
                    dx[src] += gv;
                }
                accumulate(grads, *input, xv.shape(), dx);
            }
            Op::AddBias(x, b) => {
                let bv = self.value(*b);
                let n = bv.len();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                accumulate(grads, *x, g.shape(), gd.to_vec());
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(bv).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(av).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, g.shape(), da);
                accumulate(grads, *b, g.shape(), db);
            }
            Op::Affine { input, scale } => {
                accumulate(grads, *input, g.shape(), gd.iter().map(|v| v * scale).collect());
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.as_ref().expect("sigmoid output").data();
                let dx = gd.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.as_ref().expect("tanh output").data();
                let dx = gd.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Relu(x) => {
                let xin = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xin)
                    .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Square(x) => {
                let xin = self.value(*x).data();
                let dx = gd.iter().zip(xin).map(|(gv, v)| 2.0 * gv * v).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Concat(parts) => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape();
                    let c = shape[1];
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, shape, dp);
                    offset += c;
                }
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, self.value(*x).shape(), gd.to_vec());
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                let n = shape.iter().product();
                accumulate(grads, *x, shape, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let shape = self.value(*x).shape();
                let n: usize = shape.iter().product();
                accumulate(grads, *x, shape, vec![gd[0] / n.max(1) as f64; n]);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut dz: Vec<f64> = probs.iter().map(|p| p * gd[0]).collect();
                dz[*label] -= gd[0];
                accumulate(grads, *logits, self.value(*logits).shape(), dz);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

/// Output column range `[lo, hi)` whose input column `ox * stride + kj - pad`
/// falls inside `[0, w)`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // ox * stride + k >= pad  and  ox * stride + k - pad < n_in
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi_bound = (n_in + pad).saturating_sub(k); // ox * stride < hi_bound
    let hi = if hi_bound == 0 {
        0
    } else {
        ((hi_bound - 1) / stride + 1).min(n_out)
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn conv_accumulate(
    plane: &mut [f64],
    xin: &[f64],
    wv: f64,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ki, kj): (usize, usize),
    stride: usize,
    pad: usize,
) {
    let (ylo, yhi) = valid_range(oh, h, ki, stride, pad);
    let (xlo, xhi) = valid_range(ow, w, kj, stride, pad);
    for oy in ylo..yhi {
        let iy = oy * stride + ki - pad;
        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
        let in_row = &xin[iy * w..(iy + 1) * w];
        if stride == 1 {
            let ix0 = xlo + kj - pad;
            for (o, x) in out_row[xlo..xhi].iter_mut().zip(&in_row[ix0..]) {
                *o += wv * x;
            }
        } else {
            for ox in xlo..xhi {
                out_row[ox] += wv * in_row[ox * stride + kj - pad];
            }
        }
    }
}

/// Accumulates the input gradient for one kernel tap and returns that tap's
/// weight gradient.
#[allow(clippy::too_many_arguments)]
#[inline]
fn conv_backward(
    gplane: &[f64],
    xin: &[f64],
    dxin: &mut [f64],
    wv: f64,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ki, kj): (usize, usize),
    stride: usize,
    pad: usize,
) -> f64 {
    let (ylo, yhi) = valid_range(oh, h, ki, stride, pad);
    let (xlo, xhi) = valid_range(ow, w, kj, stride, pad);
    let mut dw = 0.0;
    for oy in ylo..yhi {
        let iy = oy * stride + ki - pad;
        let g_row = &gplane[oy * ow..(oy + 1) * ow];
        let in_row = &xin[iy * w..(iy + 1) * w];
        let d_row = &mut dxin[iy * w..(iy + 1) * w];
        if stride == 1 {
            let ix0 = xlo + kj - pad;
            let n = xhi - xlo;
            let gs = &g_row[xlo..xhi];
            for ((gv, x), d) in gs.iter().zip(&in_row[ix0..ix0 + n]).zip(&mut d_row[ix0..ix0 + n]) {
                dw += gv * x;
                *d += gv * wv;
            }
        } else {
            for (ox, gv) in g_row.iter().enumerate().take(xhi).skip(xlo) {
                let ix = ox * stride + kj - pad;
                dw += gv * in_row[ix];
                d_row[ix] += gv * wv;
            }
        }
    }
    dw
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
