use alloc::vec;
use alloc::vec::Vec;

use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Gather(Var, Vec<usize>),
    Slice(Var, usize, usize, usize),
    Transpose(Var),
    Sum(Var),
    Element(Var, usize, usize),
    Scatter(Var, Vec<usize>),
    Pad(Var),
    SoftmaxCrossEntropy(Var, usize),
    BceWithLogits(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation. Node indices are a topological order,
/// so the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

/// Adjoints for every node of a tape after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.0).and_then(|g| g.as_ref())
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    let data = out.data_mut();
    for i in 0..r {
        let row = &mut data[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a stored parameter. Repeated binds of the same id on one tape
    /// return the same variable, so its gradient is accumulated once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.0) {
            return *v;
        }
        let var = self.push(store.get(id).clone(), Op::Param(id));
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        self.bound[id.0] = Some(var);
        var
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[var.0].value.dims2(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "add_row")?;
        let (r, n2) = self.dims(row, "add_row")?;
        if r != 1 || n != n2 {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let b = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..m {
            for (v, bj) in value.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&b) {
                *v += bj;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Multiplies every entry of `a` by the `[1, 1]` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.shape(s), &[1, 1]));
        }
        let factor = self.value(s).item();
        let value = self.value(a).map(|x| x * factor);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::log);
        self.push(value, Op::Ln(a))
    }

    /// Max-subtracted softmax. `axis = 1` normalises each row, `axis = 0` each column.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.dims(a, "softmax")?;
        let value = match axis {
            1 => softmax_rows(self.value(a)),
            0 => softmax_rows(&self.value(a).transpose()).transpose(),
            _ => return Err(Error::shape("softmax", self.shape(a), &[axis])),
        };
        Ok(self.push(value, Op::Softmax(a, axis)))
    }

    /// Concatenates along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat"))?;
        let (r0, c0) = self.dims(first, "concat")?;
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p, "concat")?;
            match axis {
                0 if c == c0 => rows += r,
                1 if r == r0 => cols += c,
                _ => return Err(Error::shape("concat", self.shape(first), self.shape(p))),
            }
        }
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(rows, c0, data)?
        } else {
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::matrix(r0, cols, data)?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table, "gather")?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::shape("gather", self.shape(table), &[i]));
            }
            data.extend_from_slice(self.value(table).row_slice(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        Ok(self.push(value, Op::Gather(table, indices.to_vec())))
    }

    /// Contiguous block of `len` rows (`axis = 0`) or columns (`axis = 1`).
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a, "slice")?;
        let src = self.value(a);
        let value = match axis {
            0 if start + len <= r => {
                Tensor::matrix(len, c, src.data()[start * c..(start + len) * c].to_vec())?
            }
            1 if start + len <= c => {
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&src.row_slice(i)[start..start + len]);
                }
                Tensor::matrix(r, len, data)?
            }
            _ => return Err(Error::shape("slice", src.shape(), &[axis, start, len])),
        };
        Ok(self.push(value, Op::Slice(a, axis, start, len)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims(a, "transpose")?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn element(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "element")?;
        if r >= rows || c >= cols {
            return Err(Error::shape("element", self.shape(a), &[r, c]));
        }
        let value = Tensor::scalar(self.value(a).get(r, c));
        Ok(self.push(value, Op::Element(a, r, c)))
    }

    /// Scatter-adds a `[1, n]` row into a `[1, width]` row at `targets`;
    /// repeated targets sum their mass.
    pub fn scatter(&mut self, a: Var, targets: &[usize], width: usize) -> Result<Var> {
        let (r, n) = self.dims(a, "scatter")?;
        if r != 1 || n != targets.len() || targets.iter().any(|&t| t >= width) {
            return Err(Error::shape("scatter", self.shape(a), &[targets.len(), width]));
        }
        let mut out = vec![0.0; width];
        for (&t, &v) in targets.iter().zip(self.value(a).data()) {
            out[t] += v;
        }
        Ok(self.push(Tensor::row(out), Op::Scatter(a, targets.to_vec())))
    }

    /// Zero-extends a `[1, n]` row to `[1, width]`.
    pub fn pad(&mut self, a: Var, width: usize) -> Result<Var> {
        let (r, n) = self.dims(a, "pad")?;
        if r != 1 || n > width {
            return Err(Error::shape("pad", self.shape(a), &[1, width]));
        }
        let mut out = self.value(a).data().to_vec();
        out.resize(width, 0.0);
        Ok(self.push(Tensor::row(out), Op::Pad(a)))
    }

    /// `-log softmax(logits)[target]` for a `[1, V]` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (r, v) = self.dims(logits, "cross_entropy")?;
        if r != 1 || target >= v {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[target]));
        }
        let x = self.value(logits).data();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(x.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
        let value = Tensor::scalar(lse - x[target]);
        Ok(self.push(value, Op::SoftmaxCrossEntropy(logits, target)))
    }

    /// Binary cross-entropy of a `[1, 1]` logit against a label in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        if self.value(logit).len() != 1 {
            return Err(Error::shape("bce_with_logits", self.shape(logit), &[1, 1]));
        }
        let x = self.value(logit).item();
        let value = Tensor::scalar(softplus(x) - label * x);
        Ok(self.push(value, Op::BceWithLogits(logit, label)))
    }

    /// Reverse sweep from a `[1, 1]` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj)?;
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Gradients of `output` with respect to every bound parameter.
    pub fn param_grads(&self, output: Var) -> Result<ParamGrads> {
        let grads = self.backward(output)?;
        let mut out = ParamGrads::new(self.bound.len());
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.adjoints[i] {
                    out.accumulate(id, g);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let send = |adj: &mut [Option<Tensor>], v: Var, grad: Tensor| match &mut adj[v.0] {
            Some(acc) => acc.add_assign(&grad),
            slot => *slot = Some(grad),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(adj, *a, g.matmul(&vb.transpose())?);
                send(adj, *b, va.transpose().matmul(g)?);
            }
            Op::Add(a, b) => {
                send(adj, *a, g.clone());
                send(adj, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                let (m, n) = (g.rows(), g.cols());
                let mut col = vec![0.0; n];
                for i in 0..m {
                    for (c, v) in col.iter_mut().zip(g.row_slice(i)) {
                        *c += v;
                    }
                }
                send(adj, *a, g.clone());
                send(adj, *row, Tensor::row(col));
            }
            Op::Sub(a, b) => {
                send(adj, *a, g.clone());
                send(adj, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(adj, *a, g.zip(vb, |x, y| x * y));
                send(adj, *b, g.zip(va, |x, y| x * y));
            }
            Op::Scale(a, f) => send(adj, *a, g.map(|x| x * f)),
            Op::ScaleBy(a, s) => {
                let factor = self.value(*s).item();
                send(adj, *s, Tensor::scalar(g.dot(self.value(*a))));
                send(adj, *a, g.map(|x| x * factor));
            }
            Op::OneMinus(a) => send(adj, *a, g.map(|x| -x)),
            Op::Sigmoid(a) => send(adj, *a, g.zip(&node.value, |x, y| x * y * (1.0 - y))),
            Op::Tanh(a) => send(adj, *a, g.zip(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Ln(a) => send(adj, *a, g.zip(self.value(*a), |x, y| x / y)),
            Op::Softmax(a, axis) => {
                let (y, gg) = if *axis == 1 {
                    (node.value.clone(), g.clone())
                } else {
                    (node.value.transpose(), g.transpose())
                };
                let (r, c) = (y.rows(), y.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row_slice(i), gg.row_slice(i));
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[i * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                let t = Tensor::matrix(r, c, out)?;
                send(adj, *a, if *axis == 1 { t } else { t.transpose() });
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = (self.value(p).rows(), self.value(p).cols());
                    let piece = if *axis == 0 {
                        Tensor::matrix(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?
                    } else {
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        Tensor::matrix(r, c, data)?
                    };
                    offset += if *axis == 0 { r } else { c };
                    send(adj, p, piece);
                }
            }
            Op::Gather(table, indices) => {
                let mut acc = self.value(*table).zeros_like();
                let c = acc.cols();
                for (k, &i) in indices.iter().enumerate() {
                    for (d, s) in acc.data_mut()[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(g.row_slice(k))
                    {
                        *d += s;
                    }
                }
                send(adj, *table, acc);
            }
            Op::Slice(a, axis, start, len) => {
                let mut acc = self.value(*a).zeros_like();
                let c = acc.cols();
                if *axis == 0 {
                    acc.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                } else {
                    for i in 0..acc.rows() {
                        acc.data_mut()[i * c + start..i * c + start + len]
                            .copy_from_slice(g.row_slice(i));
                    }
                }
                send(adj, *a, acc);
            }
            Op::Transpose(a) => send(adj, *a, g.transpose()),
            Op::Sum(a) => {
                let v = g.item();
                send(adj, *a, self.value(*a).map(|_| v));
            }
            Op::Element(a, r, c) => {
                let mut acc = self.value(*a).zeros_like();
                let cols = acc.cols();
                acc.data_mut()[r * cols + c] = g.item();
                send(adj, *a, acc);
            }
            Op::Scatter(a, targets) => {
                let data = targets.iter().map(|&t| g.data()[t]).collect();
                send(adj, *a, Tensor::row(data));
            }
            Op::Pad(a) => {
                let n = self.value(*a).len();
                send(adj, *a, Tensor::row(g.data()[..n].to_vec()));
            }
            Op::SoftmaxCrossEntropy(logits, target) => {
                let mut p = softmax_rows(self.value(*logits));
                p.data_mut()[*target] -= 1.0;
                let s = g.item();
                send(adj, *logits, p.map(|x| x * s));
            }
            Op::BceWithLogits(logit, label) => {
                let x = self.value(*logit).item();
                send(adj, *logit, Tensor::scalar(g.item() * (sigmoid(x) - label)));
            }
        }
        Ok(())
    }
}
