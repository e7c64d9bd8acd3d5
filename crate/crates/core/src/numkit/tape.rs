//! Reverse-mode differentiation over a linear record of primitive operations.

use crate::error::{ensure, Error, Result};

use super::tensor::{self, DenseTensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    GatherRows(Var, Vec<usize>),
    PoolMean(Var, Vec<Vec<usize>>),
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    Mse(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

/// Records forward computations so gradients can be replayed backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    min_relu_margin: f64,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros when `var` is off the loss path.
    pub fn get(&self, var: Var) -> DenseTensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => DenseTensor::zeros(&self.shapes[var.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            min_relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseTensor {
        &self.nodes[var.0].value
    }

    /// Smallest |pre-activation| seen by any ReLU on this tape. Gradient checks
    /// reject points where this is below their kink threshold.
    pub fn min_relu_margin(&self) -> f64 {
        self.min_relu_margin
    }

    fn push(&mut self, value: DenseTensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input.
    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf; [`Tape::backward`] yields a gradient for it.
    pub fn param(&mut self, value: DenseTensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = tensor::add_bias(self.value(x), self.value(bias))?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// `x · w + b`, the dense layer.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure!(
            va.same_shape(vb),
            "add shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let mut value = va.clone();
        for (o, v) in value.data_mut().iter_mut().zip(vb.data()) {
            *o += v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= factor;
        }
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let margin = input.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let value = tensor::relu(input);
        self.min_relu_margin = self.min_relu_margin.min(margin);
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Horizontal concatenation of rank-2 values with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            ensure!(
                self.value(p).rows() == rows,
                "concat_cols row mismatch: {} vs {rows}",
                self.value(p).rows()
            );
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = DenseTensor::matrix(rows, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Repeats a single-row value `n` times.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let v = self.value(x);
        ensure!(v.rows() == 1, "repeat_rows needs a single row, got {:?}", v.shape());
        ensure!(n > 0, "repeat_rows needs n > 0");
        let cols = v.cols();
        let data = v.data().repeat(n);
        let value = DenseTensor::matrix(n, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::RepeatRows(x), rg))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        ensure!(!ids.is_empty(), "gather_rows needs at least one id");
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            ensure!(id < rows, "gather id {id} out of range for {rows} rows");
            data.extend_from_slice(t.row_slice(id));
        }
        let value = DenseTensor::matrix(ids.len(), cols, data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Row `g` of the output is the mean of the rows of `x` listed in
    /// `groups[g]`, summed in the listed order.
    pub fn pool_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        ensure!(!groups.is_empty(), "pool_mean needs at least one group");
        let mut data = vec![0.0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            ensure!(!members.is_empty(), "pool_mean group {g} is empty");
            let out = &mut data[g * cols..(g + 1) * cols];
            pool_mean_row(v.data(), cols, rows, members, out)?;
        }
        let value = DenseTensor::matrix(groups.len(), cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::PoolMean(x, groups), rg))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let axis = self.value(x).rank().max(1) - 1;
        let value = tensor::softmax(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Mean of `-ln p[row, label]` over rows of a probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        let cols = p.cols();
        ensure!(
            p.rows() == labels.len(),
            "{} probability rows for {} labels",
            p.rows(),
            labels.len()
        );
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            total += tensor::cross_entropy(&p.data()[r * cols..(r + 1) * cols], y)?;
        }
        let value = DenseTensor::scalar(total / labels.len() as f64);
        let rg = self.rg(probs);
        Ok(self.push(value, Op::CrossEntropy(probs, labels.to_vec()), rg))
    }

    /// Fused, numerically stable mean cross-entropy of softmax(logits).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = tensor::softmax_cross_entropy(self.value(logits), labels)?;
        let rg = self.rg(logits);
        Ok(self.push(
            DenseTensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let loss = tensor::mse(self.value(pred).data(), target)?;
        let rg = self.rg(pred);
        Ok(self.push(DenseTensor::scalar(loss), Op::Mse(pred, target.to_vec()), rg))
    }

    /// Replays the record backward from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        if !self.value(loss).is_finite() {
            return Err(Error::Numeric("backward from a non-finite loss".into()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<DenseTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseTensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &DenseTensor, grads: &mut [Option<DenseTensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, p) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        let g_row = &gd[i * p..(i + 1) * p];
                        for k in 0..m {
                            let b_row = &vb.data()[k * p..(k + 1) * p];
                            da[i * m + k] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, va.shape(), da)?;
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; m * p];
                    for i in 0..n {
                        let g_row = &gd[i * p..(i + 1) * p];
                        for k in 0..m {
                            let aik = va.data()[i * m + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[k * p..(k + 1) * p].iter_mut().zip(g_row) {
                                *d += aik * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, vb.shape(), db)?;
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x).shape(), gd.to_vec())?;
                }
                if self.rg(*b) {
                    let vb = self.value(*b);
                    let cols = vb.len();
                    let mut db = vec![0.0; cols];
                    for row in gd.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, vb.shape(), db)?;
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        accumulate(grads, *v, self.value(*v).shape(), gd.to_vec())?;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.rg(*x) {
                    let dx = gd.iter().map(|v| v * c).collect();
                    accumulate(grads, *x, self.value(*x).shape(), dx)?;
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                let dx = vx
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, vx.shape(), dx)?;
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let vp = self.value(*p);
                    let cols = vp.cols();
                    if self.rg(*p) {
                        let mut dp = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + cols]);
                        }
                        accumulate(grads, *p, vp.shape(), dp)?;
                    }
                    offset += cols;
                }
            }
            Op::RepeatRows(x) => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let mut dx = vec![0.0; cols];
                for row in gd.chunks(cols) {
                    for (d, v) in dx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, vx.shape(), dx)?;
            }
            Op::GatherRows(table, ids) => {
                let vt = self.value(*table);
                let cols = vt.cols();
                let mut dt = vec![0.0; vt.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, v) in dt[id * cols..(id + 1) * cols]
                        .iter_mut()
                        .zip(&gd[r * cols..(r + 1) * cols])
                    {
                        *d += v;
                    }
                }
                accumulate(grads, *table, vt.shape(), dt)?;
            }
            Op::PoolMean(x, groups) => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let mut dx = vec![0.0; vx.len()];
                for (gi, members) in groups.iter().enumerate() {
                    let inv = 1.0 / members.len() as f64;
                    let g_row = &gd[gi * cols..(gi + 1) * cols];
                    for &m in members {
                        for (d, v) in dx[m * cols..(m + 1) * cols].iter_mut().zip(g_row) {
                            *d += v * inv;
                        }
                    }
                }
                accumulate(grads, *x, vx.shape(), dx)?;
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let cols = node.value.cols();
                let mut dx = vec![0.0; p.len()];
                for ((prow, grow), drow) in p.chunks(cols).zip(gd.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((d, &pv), &gv) in drow.iter_mut().zip(prow).zip(grow) {
                        *d = pv * (gv - dot);
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), dx)?;
            }
            Op::CrossEntropy(probs, labels) => {
                let vp = self.value(*probs);
                let cols = vp.cols();
                let scale = gd[0] / labels.len() as f64;
                let mut dp = vec![0.0; vp.len()];
                for (r, &y) in labels.iter().enumerate() {
                    let pv = vp.data()[r * cols + y];
                    dp[r * cols + y] = -scale / pv;
                }
                accumulate(grads, *probs, vp.shape(), dp)?;
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let vl = self.value(*logits);
                let cols = vl.cols();
                let scale = gd[0] / labels.len() as f64;
                let mut dl = vl.data().to_vec();
                for (row, &y) in dl.chunks_mut(cols).zip(labels) {
                    tensor::softmax_in_place(row);
                    row[y] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(grads, *logits, vl.shape(), dl)?;
            }
            Op::Mse(pred, target) => {
                let vp = self.value(*pred);
                let scale = 2.0 * gd[0] / target.len() as f64;
                let dp = vp.data().iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
                accumulate(grads, *pred, vp.shape(), dp)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn pool_mean_row(data: &[f64], cols: usize, rows: usize, members: &[usize], out: &mut [f64]) -> Result<()> {
    for &m in members {
        ensure!(m < rows, "pool member {m} out of range for {rows} rows");
        for (o, v) in out.iter_mut().zip(&data[m * cols..(m + 1) * cols]) {
            *o += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<DenseTensor>], var: Var, shape: &[usize], delta: Vec<f64>) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(DenseTensor::new(shape.to_vec(), delta)?),
    }
    Ok(())
}
