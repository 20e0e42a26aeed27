//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s in execution order,
//! so node ids are already topologically sorted. [`Graph::backward`] walks
//! the tape once in reverse. A graph is meant to live for one forward and
//! backward pass and then be dropped.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Mat};
use crate::tensor::{numel, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel statistics measured by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f32>,
}

/// Mean negative log-likelihood over rows, via log-sum-exp in `f64`; also
/// returns the softmax probabilities.
fn cross_entropy_rows(t: &Tensor, labels: &[usize]) -> (f64, Vec<f32>) {
    let k = t.shape()[1];
    let mut probs = vec![0f32; t.numel()];
    let mut loss = 0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = &t.data()[r * k..(r + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label] as f64;
        for j in 0..k {
            probs[r * k + j] = (row[j] as f64 - lse).exp() as f32;
        }
    }
    (loss / labels.len() as f64, probs)
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Gelu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Matmul(Var, Var),
    Softmax(Var, usize),
    SumAll(Var),
    MeanAxis(Var, usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, rstd: Vec<f32> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, rstd: Vec<f32>, train: bool },
    Conv3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Geometry of a 3D convolution, shared by the tape op and the layer API.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Conv3dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            groups: 1,
        }
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, kernel: [usize; 3]) -> Self {
        Conv3dSpec::new(channels, channels, kernel).groups(channels)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels / self.groups, kt, kh, kw]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[usize]| v.iter().all(|&d| d > 0);
        if self.in_channels == 0
            || self.out_channels == 0
            || self.groups == 0
            || !positive(&self.kernel)
            || !positive(&self.stride)
        {
            return Err(Error::invalid(format!("conv3d: non-positive geometry in {self:?}")));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::invalid(format!(
                "conv3d: channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1` per axis; errors on a non-positive extent.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.padding[i];
            if padded < self.kernel[i] {
                return Err(Error::invalid(format!(
                    "conv3d: non-positive output extent on axis {i}: input {input:?}, kernel {:?}, padding {:?}",
                    self.kernel, self.padding
                )));
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }
}

/// Gradients produced by one backward sweep, keyed by node.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires gradients.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Graph::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push_node(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape { index: v.index });
        }
        Ok(&self.nodes[v.index].value)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    /// Records `op` only if some input needs a gradient; otherwise stores a
    /// plain value so saved buffers are not kept alive.
    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_node(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        } else {
            let out_shape = kernels::broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })?;
            let sa = kernels::broadcast_strides(ta.shape(), &out_shape);
            let sb = kernels::broadcast_strides(tb.shape(), &out_shape);
            let mut data = vec![0f32; numel(&out_shape)];
            let (da, db) = (ta.data(), tb.data());
            kernels::for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| data[o] = f(da[i], db[j]));
            Tensor::from_parts(out_shape, data)
        };
        Ok(self.push(value, &[a, b], op))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let value = self.check(x)?.map(|v| v * s);
        Ok(self.push(value, &[x], Op::Scale(x, s)))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.check(x)?.map(kernels::gelu);
        Ok(self.push(value, &[x], Op::Gelu(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.check(x)?.reshape(shape)?;
        Ok(self.push(value, &[x], Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, order: &[usize]) -> Result<Var> {
        let value = self.check(x)?.permute(order)?;
        Ok(self.push(value, &[x], Op::Permute(x, order.to_vec())))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.check(x)?;
        if axis >= t.rank() {
            return Err(Error::AxisOutOfRange { op: "narrow", axis, rank: t.rank() });
        }
        if len == 0 || start + len > t.shape()[axis] {
            return Err(Error::invalid(format!(
                "narrow: range {start}..{} outside extent {}",
                start + len,
                t.shape()[axis]
            )));
        }
        let (outer, full, inner) = kernels::axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, data), &[x], Op::Narrow { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.check(*xs.first().ok_or_else(|| Error::invalid("concat: no inputs"))?)?;
        if axis >= first.rank() {
            return Err(Error::AxisOutOfRange { op: "concat", axis, rank: first.rank() });
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &v in xs {
            let t = self.check(v)?;
            let same_rest = t.rank() == shape.len()
                && t.shape().iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(Error::ShapeMismatch { op: "concat", lhs: first.shape().to_vec(), rhs: t.shape().to_vec() });
            }
            shape[axis] += t.shape()[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let t = &self.nodes[v.index].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, data), xs, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Batched matrix product over the trailing two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let plan = MatmulPlan::new(ta.shape(), tb.shape())?;
        let mut out = vec![0f32; plan.out_len()];
        let (m, k, n) = (plan.m, plan.k, plan.n);
        plan.for_each(|o, ia, ib| {
            kernels::gemm(
                1.0,
                &ta.data()[ia * m * k..(ia + 1) * m * k],
                Mat::row_major(m, k),
                &tb.data()[ib * k * n..(ib + 1) * k * n],
                Mat::row_major(k, n),
                0.0,
                &mut out[o * m * n..(o + 1) * m * n],
                Mat::row_major(m, n),
            )
        });
        let value = Tensor::from_parts(plan.out_shape.clone(), out);
        Ok(self.push(value, &[a, b], Op::Matmul(a, b)))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.check(x)?;
        if axis >= t.rank() {
            return Err(Error::AxisOutOfRange { op: "softmax", axis, rank: t.rank() });
        }
        let value = Tensor::from_parts(t.shape().to_vec(), kernels::softmax(t.data(), t.shape(), axis));
        Ok(self.push(value, &[x], Op::Softmax(x, axis)))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.sum() as f32;
        Ok(self.push(Tensor::scalar(s), &[x], Op::SumAll(x)))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.check(x)?;
        if axis >= t.rank() {
            return Err(Error::AxisOutOfRange { op: "mean_axis", axis, rank: t.rank() });
        }
        let (outer, len, inner) = kernels::axis_split(t.shape(), axis);
        let mut data = vec![0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|k| t.data()[(o * len + k) * inner + i] as f64).sum();
                data[o * inner + i] = (s / len as f64) as f32;
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, data), &[x], Op::MeanAxis(x, axis)))
    }

    /// `x @ w + b` with `x: (.., in)`, `w: (in, out)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.check(x)?, self.check(w)?);
        let d_in = *tx.shape().last().ok_or_else(|| Error::invalid("linear: scalar input"))?;
        if tw.rank() != 2 || tw.shape()[0] != d_in {
            return Err(Error::ShapeMismatch { op: "linear", lhs: tx.shape().to_vec(), rhs: tw.shape().to_vec() });
        }
        let d_out = tw.shape()[1];
        let rows = tx.numel() / d_in;
        let mut out = vec![0f32; rows * d_out];
        if let Some(b) = b {
            let tb = self.check(b)?;
            if tb.shape() != [d_out] {
                return Err(Error::ShapeMismatch { op: "linear bias", lhs: vec![d_out], rhs: tb.shape().to_vec() });
            }
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(tb.data());
            }
        }
        kernels::gemm(
            1.0,
            tx.data(),
            Mat::row_major(rows, d_in),
            tw.data(),
            Mat::row_major(d_in, d_out),
            1.0,
            &mut out,
            Mat::row_major(rows, d_out),
        );
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::from_parts(shape, out), &inputs, Op::Linear { x, w, b }))
    }

    /// Normalizes over the last axis (epsilon 1e-5), then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = *tx.shape().last().ok_or_else(|| Error::invalid("layer_norm: scalar input"))?;
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(Error::ShapeMismatch { op: "layer_norm", lhs: tx.shape().to_vec(), rhs: tg.shape().to_vec() });
        }
        let rows = tx.numel() / d;
        let mut out = vec![0f32; tx.numel()];
        let mut rstd = vec![0f32; rows];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs as f32;
            for j in 0..d {
                let xhat = ((row[j] as f64 - mean) * rs) as f32;
                out[r * d + j] = xhat * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push(value, &[x, gamma, beta], Op::LayerNorm { x, gamma, beta, rstd }))
    }

    /// Per-channel normalization of an `N x C x ...` tensor.
    ///
    /// In `Train` mode the batch statistics are used and returned so the caller
    /// can fold them into running estimates; in `Eval` mode `running` is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f32], &[f32]),
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        if tx.rank() < 2 {
            return Err(Error::invalid("batch_norm: input needs a channel axis"));
        }
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let vol: usize = tx.shape()[2..].iter().product();
        for (name, len) in [("scale", tg.numel()), ("shift", tb.numel()), ("running mean", running.0.len()), ("running var", running.1.len())] {
            if len != c {
                return Err(Error::invalid(format!("batch_norm: {name} has length {len}, expected {c} channels")));
            }
        }
        let count = (n * vol) as f64;
        let mut mean = vec![0f32; c];
        let mut rstd = vec![0f32; c];
        let mut stats = None;
        match mode {
            NormMode::Train => {
                let mut unbiased = vec![0f32; c];
                for ch in 0..c {
                    let slices = (0..n).map(|b| &tx.data()[(b * c + ch) * vol..(b * c + ch + 1) * vol]);
                    let m = slices.clone().flatten().map(|&v| v as f64).sum::<f64>() / count;
                    let ss = slices.flatten().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
                    let var = ss / count;
                    mean[ch] = m as f32;
                    rstd[ch] = (1.0 / (var + EPS).sqrt()) as f32;
                    unbiased[ch] = if count > 1.0 { (ss / (count - 1.0)) as f32 } else { 0.0 };
                }
                stats = Some(BatchStats { mean: mean.clone(), var: unbiased });
            }
            NormMode::Eval => {
                for ch in 0..c {
                    mean[ch] = running.0[ch];
                    rstd[ch] = (1.0 / (running.1[ch] as f64 + EPS).sqrt()) as f32;
                }
            }
        }
        let mut out = vec![0f32; tx.numel()];
        for b in 0..n {
            for ch in 0..c {
                let s = (b * c + ch) * vol;
                let (m, r, g, sh) = (mean[ch], rstd[ch], tg.data()[ch], tb.data()[ch]);
                for (o, &v) in out[s..s + vol].iter_mut().zip(&tx.data()[s..s + vol]) {
                    *o = (v - m) * r * g + sh;
                }
            }
        }
        let value = Tensor::from_parts(tx.shape().to_vec(), out);
        let var = self.push(value, &[x, gamma, beta], Op::BatchNorm { x, gamma, beta, mean, rstd, train: mode == NormMode::Train });
        Ok((var, stats))
    }

    /// Cross-correlation of `x: N x C x T x H x W` with `w: C' x C/g x kt x kh x kw`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &Conv3dSpec) -> Result<Var> {
        spec.validate()?;
        let (tx, tw) = (self.check(x)?, self.check(w)?);
        if tx.rank() != 5 {
            return Err(Error::invalid(format!("conv3d: expected rank-5 input, got {:?}", tx.shape())));
        }
        if tx.shape()[1] != spec.in_channels {
            return Err(Error::invalid(format!(
                "conv3d: input has {} channels, spec expects {}",
                tx.shape()[1],
                spec.in_channels
            )));
        }
        if tw.shape() != spec.weight_shape() {
            return Err(Error::ShapeMismatch { op: "conv3d weight", lhs: spec.weight_shape().to_vec(), rhs: tw.shape().to_vec() });
        }
        let input = [tx.shape()[2], tx.shape()[3], tx.shape()[4]];
        let output = spec.output_extents(input)?;
        let bias = match b {
            Some(b) => {
                let tb = self.check(b)?;
                if tb.shape() != [spec.out_channels] {
                    return Err(Error::ShapeMismatch { op: "conv3d bias", lhs: vec![spec.out_channels], rhs: tb.shape().to_vec() });
                }
                Some(tb.data())
            }
            None => None,
        };
        let geom = ConvGeom {
            batch: tx.shape()[0],
            cin: spec.in_channels,
            cout: spec.out_channels,
            groups: spec.groups,
            input,
            kernel: spec.kernel,
            stride: spec.stride,
            pad: spec.padding,
            output,
        };
        let out = kernels::conv3d_forward(tx.data(), tw.data(), bias, &geom);
        let shape = vec![geom.batch, geom.cout, output[0], output[1], output[2]];
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::from_parts(shape, out), &inputs, Op::Conv3d { x, w, b, geom }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.check(logits)?;
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "cross_entropy: logits {:?} vs {} labels",
                t.shape(),
                labels.len()
            )));
        }
        let k = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("cross_entropy: label {bad} out of range for {k} classes")));
        }
        let (loss, probs) = cross_entropy_rows(t, labels);
        let value = Tensor::scalar(loss as f32);
        Ok(self.push(value, &[logits], Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// A scalar node's value without the final rounding to `f32` when it is
    /// a reduction (`sum_all` or `cross_entropy`).
    pub fn scalar_f64(&self, v: Var) -> Result<f64> {
        let t = self.check(v)?;
        match &self.nodes[v.index].op {
            &Op::SumAll(x) => Ok(self.check(x)?.sum()),
            Op::CrossEntropy { logits, labels, .. } => Ok(cross_entropy_rows(self.check(*logits)?, labels).0),
            _ => Ok(t.item()? as f64),
        }
    }

    /// Reverse sweep from a scalar `loss`; d(loss)/d(loss) = 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let t = self.check(loss)?;
        if t.numel() != 1 {
            return Err(Error::invalid(format!("backward: loss must be scalar, got shape {:?}", t.shape())));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.backward_op(node, g, &mut grads);
        }
        Ok(Gradients { graph: self.id, grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn backward_op(&self, node: &Node, g: Vec<f32>, grads: &mut [Option<Vec<f32>>]) {
        let val = |v: Var| &self.nodes[v.index].value;
        let mut acc = |v: Var, d: Vec<f32>| accumulate(grads, v.index, d);
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        acc(v, kernels::reduce_to_shape(&g, out_shape, val(v).shape()));
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if !self.wants(v) {
                        continue;
                    }
                    let (tv, to) = (val(v), val(other));
                    let so = kernels::broadcast_strides(to.shape(), out_shape);
                    let mut prod = vec![0f32; g.len()];
                    kernels::for_each_broadcast(out_shape, &so, &so, |o, j, _| prod[o] = g[o] * to.data()[j]);
                    acc(v, kernels::reduce_to_shape(&prod, out_shape, tv.shape()));
                }
            }
            &Op::Scale(x, s) => acc(x, g.iter().map(|v| v * s).collect()),
            &Op::Gelu(x) => acc(x, g.iter().zip(val(x).data()).map(|(d, &v)| d * kernels::gelu_grad(v)).collect()),
            &Op::Reshape(x) => acc(x, g),
            Op::Permute(x, order) => {
                let mut inverse = vec![0; order.len()];
                for (i, &a) in order.iter().enumerate() {
                    inverse[a] = i;
                }
                acc(*x, kernels::permute(&g, out_shape, &inverse));
            }
            &Op::Narrow { x, axis, start } => {
                let in_shape = val(x).shape();
                let (outer, full, inner) = kernels::axis_split(in_shape, axis);
                let len = out_shape[axis];
                let mut d = vec![0f32; numel(in_shape)];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(x, d);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = val(v).shape()[*axis];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            d.extend_from_slice(&g[s..s + len * inner]);
                        }
                        acc(v, d);
                    }
                    offset += len;
                }
            }
            &Op::Matmul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let plan = MatmulPlan::new(ta.shape(), tb.shape()).expect("validated in forward");
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut da = self.wants(a).then(|| vec![0f32; ta.numel()]);
                let mut db = self.wants(b).then(|| vec![0f32; tb.numel()]);
                plan.for_each(|o, ia, ib| {
                    let go = &g[o * m * n..(o + 1) * m * n];
                    if let Some(da) = da.as_mut() {
                        kernels::gemm(
                            1.0,
                            go,
                            Mat::row_major(m, n),
                            &tb.data()[ib * k * n..(ib + 1) * k * n],
                            Mat::row_major(k, n).t(),
                            1.0,
                            &mut da[ia * m * k..(ia + 1) * m * k],
                            Mat::row_major(m, k),
                        );
                    }
                    if let Some(db) = db.as_mut() {
                        kernels::gemm(
                            1.0,
                            &ta.data()[ia * m * k..(ia + 1) * m * k],
                            Mat::row_major(m, k).t(),
                            go,
                            Mat::row_major(m, n),
                            1.0,
                            &mut db[ib * k * n..(ib + 1) * k * n],
                            Mat::row_major(k, n),
                        );
                    }
                });
                if let Some(d) = da {
                    acc(a, d);
                }
                if let Some(d) = db {
                    acc(b, d);
                }
            }
            &Op::Softmax(x, axis) => acc(x, kernels::softmax_backward(node.value.data(), &g, out_shape, axis)),
            &Op::SumAll(x) => acc(x, vec![g[0]; val(x).numel()]),
            &Op::MeanAxis(x, axis) => {
                let in_shape = val(x).shape();
                let (outer, len, inner) = kernels::axis_split(in_shape, axis);
                let scale = 1.0 / len as f32;
                let mut d = vec![0f32; numel(in_shape)];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            d[(o * len + k) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                acc(x, d);
            }
            &Op::Linear { x, w, b } => {
                let (tx, tw) = (val(x), val(w));
                let (d_in, d_out) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.numel() / d_in;
                if self.wants(x) {
                    let mut d = vec![0f32; tx.numel()];
                    kernels::gemm(
                        1.0,
                        &g,
                        Mat::row_major(rows, d_out),
                        tw.data(),
                        Mat::row_major(d_in, d_out).t(),
                        0.0,
                        &mut d,
                        Mat::row_major(rows, d_in),
                    );
                    acc(x, d);
                }
                if self.wants(w) {
                    let mut d = vec![0f32; tw.numel()];
                    kernels::gemm(
                        1.0,
                        tx.data(),
                        Mat::row_major(rows, d_in).t(),
                        &g,
                        Mat::row_major(rows, d_out),
                        0.0,
                        &mut d,
                        Mat::row_major(d_in, d_out),
                    );
                    acc(w, d);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut d = vec![0f64; d_out];
                    for row in g.chunks(d_out) {
                        for (a, &v) in d.iter_mut().zip(row) {
                            *a += v as f64;
                        }
                    }
                    acc(b, d.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let (tx, tg) = (val(*x), val(*gamma));
                let d = tg.numel();
                let mut dx = vec![0f32; tx.numel()];
                let mut dgamma = vec![0f64; d];
                let mut dbeta = vec![0f64; d];
                let mut xhat = vec![0f32; d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let row = &tx.data()[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                    let (mut m1, mut m2) = (0f64, 0f64);
                    for j in 0..d {
                        xhat[j] = ((row[j] as f64 - mean) * rs as f64) as f32;
                        let dxhat = (gr[j] * tg.data()[j]) as f64;
                        m1 += dxhat;
                        m2 += dxhat * xhat[j] as f64;
                        dgamma[j] += (gr[j] * xhat[j]) as f64;
                        dbeta[j] += gr[j] as f64;
                    }
                    let (m1, m2) = (m1 / d as f64, m2 / d as f64);
                    for j in 0..d {
                        let dxhat = (gr[j] * tg.data()[j]) as f64;
                        dx[r * d + j] = (rs as f64 * (dxhat - m1 - xhat[j] as f64 * m2)) as f32;
                    }
                }
                if self.wants(*x) {
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, dgamma.into_iter().map(|v| v as f32).collect());
                }
                if self.wants(*beta) {
                    acc(*beta, dbeta.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, rstd, train } => {
                let tx = val(*x);
                let tg = val(*gamma);
                let (n, c) = (tx.shape()[0], tx.shape()[1]);
                let vol: usize = tx.shape()[2..].iter().product();
                let count = (n * vol) as f64;
                let mut dx = vec![0f32; tx.numel()];
                let mut dgamma = vec![0f32; c];
                let mut dbeta = vec![0f32; c];
                for ch in 0..c {
                    let (m, r, gm) = (mean[ch], rstd[ch], tg.data()[ch]);
                    let (mut sum_g, mut sum_gx) = (0f64, 0f64);
                    for b in 0..n {
                        let s = (b * c + ch) * vol;
                        for j in s..s + vol {
                            let xhat = (tx.data()[j] - m) * r;
                            sum_g += g[j] as f64;
                            sum_gx += (g[j] * xhat) as f64;
                        }
                    }
                    dgamma[ch] = sum_gx as f32;
                    dbeta[ch] = sum_g as f32;
                    // Eval mode normalizes with constants, so the batch terms vanish.
                    let (mg, mgx) = if *train { (sum_g / count, sum_gx / count) } else { (0.0, 0.0) };
                    for b in 0..n {
                        let s = (b * c + ch) * vol;
                        for j in s..s + vol {
                            let xhat = ((tx.data()[j] - m) * r) as f64;
                            dx[j] = (gm as f64 * r as f64 * (g[j] as f64 - mg - xhat * mgx)) as f32;
                        }
                    }
                }
                if self.wants(*x) {
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, dgamma);
                }
                if self.wants(*beta) {
                    acc(*beta, dbeta);
                }
            }
            &Op::Conv3d { x, w, b, geom } => {
                let need = [self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b))];
                let grads = kernels::conv3d_backward(val(x).data(), val(w).data(), &g, &geom, need);
                if let Some(d) = grads.dx {
                    acc(x, d);
                }
                if let Some(d) = grads.dw {
                    acc(w, d);
                }
                if let (Some(b), Some(d)) = (b, grads.db) {
                    acc(b, d);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = g[0] / labels.len() as f32;
                let mut d: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= scale;
                }
                acc(*logits, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], index: usize, d: Vec<f32>) {
    match &mut grads[index] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(d),
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    out_shape: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch_shape = kernels::broadcast_shape(ab, bb).ok_or_else(mismatch)?;
        let a_strides = kernels::broadcast_strides(ab, &batch_shape);
        let b_strides = kernels::broadcast_strides(bb, &batch_shape);
        let mut out_shape = batch_shape.clone();
        out_shape.extend([m, n]);
        Ok(MatmulPlan { m, k, n, batch_shape, a_strides, b_strides, out_shape })
    }

    fn out_len(&self) -> usize {
        numel(&self.out_shape)
    }

    /// `f(out_batch, a_batch, b_batch)` in units of whole matrices.
    fn for_each(&self, f: impl FnMut(usize, usize, usize)) {
        kernels::for_each_broadcast(&self.batch_shape, &self.a_strides, &self.b_strides, f);
    }
}

