use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::rng::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::DenseTensor;

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, DenseTensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, i: usize) -> &DenseTensor {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut DenseTensor {
        &mut self.entries[i].1
    }

    pub fn by_name(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &DenseTensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseTensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn zeros_like(&self) -> Vec<DenseTensor> {
        self.tensors().map(|t| DenseTensor::zeros(t.shape())).collect()
    }

    pub fn set_all(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data_mut().fill(value);
        }
    }

    /// Records every parameter as a trainable leaf (or as constants when
    /// `trainable` is false) and returns their handles in order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(DenseTensor::is_finite)
    }

    /// Checks that `other` has the same names and shapes.
    pub fn ensure_compatible(&self, other: &ParamSet) -> Result<()> {
        ensure!(
            self.len() == other.len(),
            "parameter count mismatch: {} vs {}",
            self.len(),
            other.len()
        );
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            ensure!(na == nb, "parameter name mismatch: {na} vs {nb}");
            ensure!(
                ta.shape() == tb.shape(),
                "shape mismatch for {na}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            );
        }
        Ok(())
    }
}

/// Collects the gradients of bound parameters in binding order.
pub fn collect_grads(grads: &Gradients, vars: &[Var]) -> Vec<DenseTensor> {
    vars.iter().map(|&v| grads.get(v)).collect()
}

/// Adds `src` into `dst` elementwise.
pub fn add_grads(dst: &mut [DenseTensor], src: &[DenseTensor]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
}

pub fn scale_grads(grads: &mut [DenseTensor], factor: f64) {
    for g in grads {
        for v in g.data_mut() {
            *v *= factor;
        }
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> DenseTensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    DenseTensor::new(vec![rows, cols], data).expect("positive dims")
}
