//! Arena tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and the handles of its
//! inputs. Handles ([`Var`]) are plain indices, so nodes are already in
//! topological order and the backward pass is a single reverse sweep.

use super::Tensor;
use crate::error::{Error, Result};
use crate::linalg;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One row of a row-interpolation op: `out = (1 − t)·x[from] + t·x[to]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lerp {
    pub from: usize,
    pub to: usize,
    pub t: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    Log(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Interpolate(Var, Vec<Lerp>),
    RowNormalize(Var),
    PairDistances(Var, Var, Vec<(usize, usize)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softmax(..) => "softmax",
            Op::Log(..) => "log",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Gather(..) => "gather",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Interpolate(..) => "interpolate",
            Op::RowNormalize(..) => "row_normalize",
            Op::PairDistances(..) => "pair_distances",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::PairDistances(a, b, _) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Softmax(a)
            | Op::Log(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::Gather(a, _)
            | Op::Reshape(a)
            | Op::Interpolate(a, _)
            | Op::RowNormalize(a) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Single-owner record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn row_len(shape: &[usize]) -> usize {
    shape.iter().skip(1).product()
}

impl Tape {
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

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. It takes part in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        self.push(tensor, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Result<Var> {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape(format!("matmul: [{m},{k}] by [{k2},{n}]")));
        }
        let out = linalg::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, c))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if self.shape(bias) != [n] {
            return Err(Error::shape(format!(
                "add_bias: bias {:?} for [{m},{n}]",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push(Tensor::from_parts(vec![m, n], data), Op::AddBias(a, bias))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::LeakyRelu(a, slope))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = *x.shape().last().ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Softmax(a))
    }

    /// Natural log of strictly positive entries.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        self.log_clamped(a, 0.0)
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(eps).ln()).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Log(a, eps))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(0.0, |s, v| s + v);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let s = x.data().iter().fold(0.0, |s, v| s + v) / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum of a matrix over `axis` (0: down columns, 1: along rows).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let x = self.value(a).data();
        let out = match axis {
            0 => {
                let mut out = vec![0.0; n];
                for row in x.chunks_exact(n) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::from_parts(vec![n], out)
            }
            1 => Tensor::from_parts(
                vec![m],
                x.chunks_exact(n).map(|r| r.iter().fold(0.0, |s, v| s + v)).collect(),
            ),
            _ => return Err(Error::shape(format!("sum_axis: axis {axis} of a matrix"))),
        };
        self.push(out, Op::SumAxis(a, axis))
    }

    /// Mean of a matrix over `axis`.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let count = if axis == 0 { m } else { n };
        if count == 0 {
            return Err(Error::shape("mean over an empty axis"));
        }
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Selects rows (first-axis slices) by index; indices may repeat.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 {
            return Err(Error::shape("gather from a scalar"));
        }
        let width = row_len(x.shape());
        let count = x.shape()[0];
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= count {
                return Err(Error::shape(format!("gather: row {r} of {count}")));
            }
            data.extend_from_slice(&x.data()[r * width..(r + 1) * width]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        self.push(Tensor::from_parts(shape, data), Op::Gather(a, rows.to_vec()))
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims2(p)).collect::<Result<_>>()?;
        let out = match axis {
            0 => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(Error::shape("concat axis 0: column counts differ"));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::from_parts(vec![dims.iter().map(|d| d.0).sum(), n], data)
            }
            1 => {
                let m = dims[0].0;
                if dims.iter().any(|d| d.0 != m) {
                    return Err(Error::shape("concat axis 1: row counts differ"));
                }
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(m * total);
                for i in 0..m {
                    for (&p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(p).data()[i * d.1..(i + 1) * d.1]);
                    }
                }
                Tensor::from_parts(vec![m, total], data)
            }
            _ => return Err(Error::shape(format!("concat: axis {axis}"))),
        };
        self.push(out, Op::Concat(parts.to_vec(), axis))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(a))
    }

    /// Builds `pairs.len()` rows, each a linear blend of two input rows.
    pub fn interpolate(&mut self, a: Var, pairs: &[Lerp]) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 {
            return Err(Error::shape("interpolate a scalar"));
        }
        let width = row_len(x.shape());
        let count = x.shape()[0];
        let mut data = Vec::with_capacity(pairs.len() * width);
        for p in pairs {
            if p.from >= count || p.to >= count {
                return Err(Error::shape(format!("interpolate: row out of {count}")));
            }
            let (u, v) = (
                &x.data()[p.from * width..(p.from + 1) * width],
                &x.data()[p.to * width..(p.to + 1) * width],
            );
            data.extend(u.iter().zip(v).map(|(&s, &e)| (1.0 - p.t) * s + p.t * e));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = pairs.len();
        self.push(Tensor::from_parts(shape, data), Op::Interpolate(a, pairs.to_vec()))
    }

    /// Divides each row of a matrix by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let s = row.iter().fold(0.0, |s, v| s + v);
            if s == 0.0 {
                return Err(Error::Numeric("row_normalize: zero-sum row".into()));
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(Tensor::from_parts(vec![m, n], data), Op::RowNormalize(a))
    }

    /// Euclidean distances `‖a[i] − b[j]‖` for each `(i, j)`, as a vector.
    /// The pairing is treated as fixed during differentiation.
    pub fn pair_distances(&mut self, a: Var, b: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (ma, d) = self.dims2(a)?;
        let (mb, d2) = self.dims2(b)?;
        if d != d2 {
            return Err(Error::shape(format!("pair_distances: dims {d} and {d2}")));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if i >= ma || j >= mb {
                return Err(Error::shape("pair_distances: index out of range"));
            }
            let s: f64 = x[i * d..(i + 1) * d]
                .iter()
                .zip(&y[j * d..(j + 1) * d])
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            out.push(s.sqrt());
        }
        self.push(
            Tensor::from_parts(vec![pairs.len()], out),
            Op::PairDistances(a, b, pairs.to_vec()),
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape: a second call
    /// fails with [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::input("loss does not depend on any tensor requiring grad"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, contribution) in self.local_grads(id, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        // only leaves keep their gradients
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, id: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[id];
        let out = &node.value;
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.shape(v).to_vec(), data);
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked in forward");
                let n = self.value(*b).shape()[1];
                let mut res = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    res.push((*a, like(*a, linalg::matmul_nt(gd, self.value(*b).data(), m, n, k))));
                }
                if self.requires_grad(*b) {
                    res.push((*b, like(*b, linalg::matmul_tn(self.value(*a).data(), gd, m, k, n))));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, gd.iter().map(|v| -v).collect()))],
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * y).collect())),
                    (*b, like(*b, gd.iter().zip(x).map(|(g, x)| g * x).collect())),
                ]
            }
            Op::Scale(a, c) => vec![(*a, like(*a, gd.iter().map(|v| v * c).collect()))],
            Op::AddBias(a, bias) => {
                let n = self.shape(*bias)[0];
                let mut gb = vec![0.0; n];
                for row in gd.chunks_exact(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                vec![(*a, g.clone()), (*bias, like(*bias, gb))]
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let data = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                    .collect();
                vec![(*a, like(*a, data))]
            }
            Op::Softmax(a) => {
                let n = *out.shape().last().expect("checked in forward");
                let mut data = vec![0.0; gd.len()];
                for ((dx, gy), y) in data
                    .chunks_exact_mut(n)
                    .zip(gd.chunks_exact(n))
                    .zip(out.data().chunks_exact(n))
                {
                    let dot: f64 = gy.iter().zip(y).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dx.iter_mut().zip(gy).zip(y) {
                        *d = y * (g - dot);
                    }
                }
                vec![(*a, like(*a, data))]
            }
            Op::Log(a, eps) => {
                let x = self.value(*a).data();
                let data = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > *eps { g / x } else { 0.0 })
                    .collect();
                vec![(*a, like(*a, data))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0]))],
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0] / n))]
            }
            Op::SumAxis(a, axis) => {
                let (m, n) = self.value(*a).dims2().expect("checked in forward");
                let mut data = vec![0.0; m * n];
                for (i, row) in data.chunks_exact_mut(n).enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if *axis == 0 { gd[j] } else { gd[i] };
                    }
                }
                vec![(*a, like(*a, data))]
            }
            Op::Gather(a, rows) => {
                let width = row_len(self.shape(*a));
                let mut data = vec![0.0; self.value(*a).len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (d, s) in data[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(&gd[k * width..(k + 1) * width])
                    {
                        *d += s;
                    }
                }
                vec![(*a, like(*a, data))]
            }
            Op::Concat(parts, axis) => {
                let mut res = Vec::with_capacity(parts.len());
                match axis {
                    0 => {
                        let mut offset = 0;
                        for &p in parts {
                            let len = self.value(p).len();
                            res.push((p, like(p, gd[offset..offset + len].to_vec())));
                            offset += len;
                        }
                    }
                    _ => {
                        let m = out.shape()[0];
                        let total = out.shape()[1];
                        let mut col = 0;
                        for &p in parts {
                            let w = self.shape(p)[1];
                            let mut data = Vec::with_capacity(m * w);
                            for i in 0..m {
                                data.extend_from_slice(&gd[i * total + col..i * total + col + w]);
                            }
                            res.push((p, like(p, data)));
                            col += w;
                        }
                    }
                }
                res
            }
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::Interpolate(a, pairs) => {
                let width = row_len(self.shape(*a));
                let mut data = vec![0.0; self.value(*a).len()];
                for (k, p) in pairs.iter().enumerate() {
                    let gr = &gd[k * width..(k + 1) * width];
                    for (d, s) in data[p.from * width..(p.from + 1) * width].iter_mut().zip(gr) {
                        *d += (1.0 - p.t) * s;
                    }
                    for (d, s) in data[p.to * width..(p.to + 1) * width].iter_mut().zip(gr) {
                        *d += p.t * s;
                    }
                }
                vec![(*a, like(*a, data))]
            }
            Op::RowNormalize(a) => {
                let n = self.shape(*a)[1];
                let x = self.value(*a).data();
                let mut data = vec![0.0; x.len()];
                for (((dx, gy), y), xr) in data
                    .chunks_exact_mut(n)
                    .zip(gd.chunks_exact(n))
                    .zip(out.data().chunks_exact(n))
                    .zip(x.chunks_exact(n))
                {
                    let s = xr.iter().fold(0.0, |s, v| s + v);
                    let dot: f64 = gy.iter().zip(y).map(|(g, y)| g * y).sum();
                    for (d, g) in dx.iter_mut().zip(gy) {
                        *d = (g - dot) / s;
                    }
                }
                vec![(*a, like(*a, data))]
            }
            Op::PairDistances(a, b, pairs) => {
                let d = self.shape(*a)[1];
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; x.len()];
                let mut gb = vec![0.0; y.len()];
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let dist = out.data()[k];
                    if dist == 0.0 {
                        continue;
                    }
                    let w = gd[k] / dist;
                    for c in 0..d {
                        let diff = w * (x[i * d + c] - y[j * d + c]);
                        ga[i * d + c] += diff;
                        gb[j * d + c] -= diff;
                    }
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
        }
    }
}
