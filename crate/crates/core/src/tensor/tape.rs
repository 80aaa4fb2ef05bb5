use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};
use super::Tensor;
use crate::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    MaxPool { input: usize, argmax: Vec<usize> },
    Mean(usize),
    Sum(usize),
    Bce { pred: usize, labels: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a single reverse pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::InvalidArgument(format!("{op}: expected a matrix, got shape {:?}", t.shape())))
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::InvalidTensor(format!(
                "non-finite result from {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

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

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims("matmul", ta)?;
        let (k2, n) = dims("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a.0, b.0), rg)
    }

    /// Elementwise sum of equal shapes, or a matrix plus a broadcast `1×n` row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rg = self.rg(&[a.0, b.0]);
        if ta.shape() == tb.shape() {
            let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let shape = ta.shape().to_vec();
            return self.push(Tensor::from_parts(shape, out), Op::Add(a.0, b.0), rg);
        }
        match (ta.dims2(), tb.dims2()) {
            (Some((m, n)), Some((1, n2))) if n == n2 && ta.shape().len() == 2 => {
                let row = tb.data();
                let mut out = ta.data().to_vec();
                for r in 0..m {
                    for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(a.0, b.0), rg)
            }
            _ => Err(mismatch("add", ta, tb)),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::from_parts(shape, out), Op::Mul(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|x| x * s).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::from_parts(shape, out), Op::Scale(a.0, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::from_parts(shape, out), Op::Relu(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::from_parts(shape, out), Op::Sigmoid(a.0), rg)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = dims("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = dims("concat_rows", t)?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&idx);
        self.push(Tensor::from_parts(vec![rows, cols], out), Op::ConcatRows(idx), rg)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = dims("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = dims("concat_cols", t)?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            widths.push(c);
        }
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&idx);
        self.push(Tensor::from_parts(vec![rows, cols], out), Op::ConcatCols(idx), rg)
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims("gather_rows", ta)?;
        if rows.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::InvalidArgument(format!("gather_rows: row {r} out of {m}")));
            }
            out.extend_from_slice(&ta.data()[r * n..(r + 1) * n]);
        }
        let rg = self.rg(&[a.0]);
        self.push(
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::GatherRows(a.0, rows.to_vec()),
            rg,
        )
    }

    /// Column-wise max over consecutive groups of `group` rows.
    pub fn max_pool_rows(&mut self, a: Var, group: usize) -> Result<Var> {
        let m = dims("max_pool_rows", self.value(a))?.0;
        if group == 0 || m % group != 0 {
            return Err(Error::InvalidArgument(format!(
                "max_pool_rows: {m} rows do not split into groups of {group}"
            )));
        }
        let offsets: Vec<usize> = (0..=m / group).map(|g| g * group).collect();
        self.max_pool_segments(a, &offsets)
    }

    /// Column-wise max over row segments `offsets[i]..offsets[i+1]`.
    /// Ties resolve to the lowest row index.
    pub fn max_pool_segments(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = dims("max_pool_segments", ta)?;
        if offsets.len() < 2
            || offsets[0] != 0
            || *offsets.last().unwrap() != m
            || offsets.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidArgument(String::from(
                "max_pool_segments: offsets must increase strictly from 0 to the row count",
            )));
        }
        let groups = offsets.len() - 1;
        let mut out = vec![f64::NEG_INFINITY; groups * n];
        let mut argmax = vec![0usize; groups * n];
        let d = ta.data();
        for g in 0..groups {
            for r in offsets[g]..offsets[g + 1] {
                let row = &d[r * n..(r + 1) * n];
                let o = &mut out[g * n..(g + 1) * n];
                let am = &mut argmax[g * n..(g + 1) * n];
                for c in 0..n {
                    if row[c] > o[c] {
                        o[c] = row[c];
                        am[c] = r;
                    }
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(
            Tensor::from_parts(vec![groups, n], out),
            Op::MaxPool { input: a.0, argmax },
            rg,
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.data().iter().sum::<f64>() / ta.len() as f64;
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    /// Mean binary cross-entropy of probabilities against {0,1} labels.
    pub fn bce(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let w = vec![1.0; labels.len()];
        self.weighted_bce(pred, labels, &w)
    }

    /// Weighted binary cross-entropy, normalized by the weight total.
    pub fn weighted_bce(&mut self, pred: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.is_empty() || labels.is_empty() {
            return Err(Error::Empty("bce_loss"));
        }
        if tp.len() != labels.len() || weights.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_loss",
                lhs: tp.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::arg("bce_loss: labels must be 0 or 1"));
        }
        let wsum: f64 = weights.iter().sum();
        if !(wsum > 0.0) || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::arg("bce_loss: weights must be non-negative with positive total"));
        }
        let mut loss = 0.0;
        for ((&p, &y), &w) in tp.data().iter().zip(labels).zip(weights) {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= w * (y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p));
        }
        let rg = self.rg(&[pred.0]);
        self.push(
            Tensor::scalar(loss / wsum),
            Op::Bce {
                pred: pred.0,
                labels: labels.to_vec(),
                weights: weights.iter().map(|w| w / wsum).collect(),
            },
            rg,
        )
    }

    /// Hash of every non-smooth decision taken in the forward pass (ReLU
    /// gates, max-pool winners, BCE clamps). Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(i) => {
                    for &x in self.nodes[*i].value.data() {
                        h.write_u64((x > 0.0) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&a| h.write_u64(a as u64)),
                Op::Bce { pred, .. } => {
                    for &p in self.nodes[*pred].value.data() {
                        h.write_u64((p < BCE_CLAMP) as u64 | (((p > 1.0 - BCE_CLAMP) as u64) << 1));
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n_nodes = self.nodes.len();
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    Some(grads[i].take().unwrap_or_else(|| vec![0.0; n.value.len()]))
                } else {
                    None
                }
            })
            .collect();
        let shapes = self.nodes.into_iter().map(|n| n.value.shape).collect();
        Ok(Gradients { grads: leaves, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |i: usize| nodes[i].value.data();
        let wants = |i: usize| nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[*a].value.dims2().unwrap();
                let n = nodes[*b].value.cols();
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_a_bt_acc(g, val(*b), &mut ga, m, n, k);
                    accumulate(grads, *a, &ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_at_b_acc(val(*a), g, &mut gb, m, k, n);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    let n = nodes[*b].value.len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (o, &x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, &ga);
                }
                if wants(*b) {
                    let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    let ga: Vec<f64> = g.iter().map(|g| g * s).collect();
                    accumulate(grads, *a, &ga);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(val(*a))
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, &ga);
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(grads, *a, &ga);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    if wants(p) {
                        accumulate(grads, p, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut col_off = 0;
                for &p in parts {
                    let w = nodes[p].value.cols();
                    if wants(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * cols + col_off..r * cols + col_off + w]);
                        }
                        accumulate(grads, p, &gp);
                    }
                    col_off += w;
                }
            }
            Op::GatherRows(a, rows) => {
                if wants(*a) {
                    let n = nodes[*a].value.cols();
                    let mut ga = vec![0.0; nodes[*a].value.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, &x) in ga[r * n..(r + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *a, &ga);
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let n = nodes[*input].value.cols();
                    let mut ga = vec![0.0; nodes[*input].value.len()];
                    for (j, (&r, &gv)) in argmax.iter().zip(g).enumerate() {
                        ga[r * n + j % n] += gv;
                    }
                    accumulate(grads, *input, &ga);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let len = nodes[*a].value.len();
                    let ga = vec![g[0] / len as f64; len];
                    accumulate(grads, *a, &ga);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let ga = vec![g[0]; nodes[*a].value.len()];
                    accumulate(grads, *a, &ga);
                }
            }
            Op::Bce { pred, labels, weights } => {
                if wants(*pred) {
                    let ga: Vec<f64> = val(*pred)
                        .iter()
                        .zip(labels)
                        .zip(weights)
                        .map(|((&p, &y), &w)| {
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                                0.0
                            } else {
                                g[0] * w * (-(y / p) + (1.0 - y) / (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(grads, *pred, &ga);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &x)| *a += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) | Op::AddRow(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::MaxPool { .. } => "max_pool_rows",
        Op::Mean(_) => "mean",
        Op::Sum(_) => "sum",
        Op::Bce { .. } => "bce_loss",
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf that requires one; zeros when the leaf did not
    /// influence the loss. `None` for constants and intermediate values.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        let g = self.grads.get_mut(v.0)?.take()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g))
    }

    /// Number of leaves carrying a gradient.
    pub fn count(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    pub(crate) const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub(crate) fn new() -> Self {
        Fnv(Self::OFFSET)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub(crate) fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[-1.0, 0.0, 2.0]]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(alloc::vec![2, 3]));
        let b = tape.constant(Tensor::zeros(alloc::vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "matmul",
                lhs: alloc::vec![2, 3],
                rhs: alloc::vec![2, 3]
            }
        );
        let msg = alloc::format!("{err}");
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"));
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.data(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_no_gradients() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let loss = tape.mean(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.count(), 0);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let unused = tape.param(Tensor::zeros(alloc::vec![2, 2]));
        let loss = tape.mean(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.data(unused).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(alloc::vec![1, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn bce_through_sigmoid_chain_rule() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let one = tape.constant(Tensor::scalar(1.0));
        let z = tape.matmul(w, one).unwrap();
        let p = tape.sigmoid(z).unwrap();
        let loss = tape.bce(p, &[1.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!((g.data(w).unwrap()[0] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn bce_values() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(alloc::vec![0.5]).unwrap());
        let l = tape.bce(p, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - core::f64::consts::LN_2).abs() < 1e-12);

        let p = tape.constant(Tensor::row(alloc::vec![1.0 - 1e-7]).unwrap());
        let l = tape.bce(p, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - 1e-7).abs() < 1e-12);

        let p = tape.constant(Tensor::row(alloc::vec![0.9, 0.1]).unwrap());
        let l = tape.bce(p, &[1.0, 0.0]).unwrap();
        let expected = -(libm::log(0.9) + libm::log(0.9)) / 2.0;
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.10536).abs() < 1e-5);

        let p = tape.constant(Tensor::row(alloc::vec![1.0]).unwrap());
        assert!(matches!(tape.bce(p, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn max_pool_ties_pick_first_row() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[&[1.0, 5.0], &[1.0, 2.0], &[0.0, 7.0], &[3.0, 7.0]]));
        let p = tape.max_pool_rows(x, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 5.0, 3.0, 7.0]);
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.data(x).unwrap(), &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn add_broadcasts_bias_row() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.param(t(&[&[10.0, 20.0]]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.data(b).unwrap(), &[2.0, 2.0]);
    }
}
