use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Row-major `f64` tensor. Rank 0 is a scalar with shape `[]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        ensure!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive, got {shape:?}"
        );
        let len: usize = shape.iter().product();
        ensure!(
            len == data.len(),
            "shape {shape:?} needs {len} values, got {}",
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a rank-2 tensor; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &DenseTensor) -> bool {
        self.shape == other.shape
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what}: non-finite input")))
        }
    }
}

/// `a (n×m) · b (m×p)`.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    ensure!(
        a.rank() == 2 && b.rank() == 2,
        "matmul needs rank-2 operands, got {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let (n, m, p) = (a.shape[0], a.shape[1], b.shape[1]);
    ensure!(
        b.shape[0] == m,
        "matmul shape mismatch {:?} · {:?}",
        a.shape(),
        b.shape()
    );
    let mut out = vec![0.0; n * p];
    matmul_into(&a.data, &b.data, &mut out, n, m, p);
    DenseTensor::matrix(n, p, out)
}

/// Accumulates `a (n×m) · b (m×p)` into `out`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, p: usize) {
    for i in 0..n {
        let out_row = &mut out[i * p..(i + 1) * p];
        for (k, &aik) in a[i * m..(i + 1) * m].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * p..(k + 1) * p];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

/// Adds a length-`cols` bias to every row of `x`.
pub fn add_bias(x: &DenseTensor, bias: &DenseTensor) -> Result<DenseTensor> {
    let cols = x.cols();
    ensure!(
        bias.len() == cols,
        "bias of length {} does not match {cols} columns",
        bias.len()
    );
    let mut out = x.clone();
    for row in out.data.chunks_mut(cols) {
        for (o, b) in row.iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn relu(x: &DenseTensor) -> DenseTensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Softmax along `axis` (0 = down columns, last axis = along rows).
pub fn softmax(x: &DenseTensor, axis: usize) -> Result<DenseTensor> {
    x.check_finite("softmax")?;
    let rank = x.rank().max(1);
    ensure!(axis < rank, "softmax axis {axis} out of range for rank {rank}");
    if rank == 1 || axis == rank - 1 {
        let cols = x.cols();
        let mut out = x.clone();
        for row in out.data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        Ok(out)
    } else {
        ensure!(rank == 2, "softmax over axis 0 needs a rank-2 tensor");
        let (rows, cols) = (x.shape[0], x.shape[1]);
        let mut out = x.clone();
        let mut column = vec![0.0; rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = x.data[r * cols + c];
            }
            softmax_in_place(&mut column);
            for r in 0..rows {
                out.data[r * cols + c] = column[r];
            }
        }
        Ok(out)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `-ln p[label]` for one probability row.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> Result<f64> {
    ensure!(
        label < probabilities.len(),
        "label {label} out of range for {} classes",
        probabilities.len()
    );
    let p = probabilities[label];
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::Numeric(format!("cross_entropy: invalid probability {p}")));
    }
    Ok(-p.ln())
}

/// Mean cross-entropy of row-wise softmax(logits) against labels, computed
/// with log-sum-exp.
pub fn softmax_cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<f64> {
    logits.check_finite("softmax_cross_entropy")?;
    let cols = logits.cols();
    ensure!(
        logits.rows() == labels.len(),
        "{} logit rows for {} labels",
        logits.rows(),
        labels.len()
    );
    let mut total = 0.0;
    for (row, &y) in logits.data.chunks(cols).zip(labels) {
        ensure!(y < cols, "label {y} out of range for {cols} classes");
        total += log_sum_exp(row) - row[y];
    }
    Ok(total / labels.len() as f64)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean squared error.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    ensure!(
        pred.len() == target.len() && !pred.is_empty(),
        "mse needs equal nonempty lengths, got {} and {}",
        pred.len(),
        target.len()
    );
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}
