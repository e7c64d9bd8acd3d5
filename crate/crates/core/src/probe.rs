//! Linear-probe reward.
//!
//! A `k × C` softmax-regression probe starts at zero, takes `P` full-batch
//! gradient steps on the support subjects, and is scored on the query
//! subjects: `R(S) = −mean query cross-entropy`.

use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::error::{ensure, Error, Result};
use crate::numkit::tensor::log_sum_exp;
use crate::setenc::FeatureSet;

pub const DEFAULT_PROBE_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    /// Fixed step size; `None` uses [`descent_lr`].
    pub lr: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_PROBE_STEPS,
            lr: None,
        }
    }
}

/// Probe weights (`k × C`, row-major) and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    pub k: usize,
    pub classes: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ProbeParams {
    pub fn zeros(k: usize, classes: usize) -> Self {
        Self {
            k,
            classes,
            w: vec![0.0; k * classes],
            b: vec![0.0; classes],
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&self.w[i * self.classes..(i + 1) * self.classes]) {
                *o += xi * w;
            }
        }
    }
}

/// Step size `0.5 / (1 + max_i ‖x_i‖² / 4 + 1)`.
///
/// The mean softmax cross-entropy is `L`-smooth in `(W, b)` with
/// `L ≤ ½ (max ‖x_i‖² + 1)`, so any step below `2 / L` decreases the loss;
/// this step is always below that bound.
pub fn descent_lr(x: &[f64], k: usize) -> f64 {
    let max_sq = x
        .chunks(k.max(1))
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    0.5 / (1.0 + max_sq / 4.0 + 1.0)
}

fn check_inputs(x: &[f64], k: usize, labels: &[usize], classes: usize) -> Result<()> {
    ensure!(k > 0 && classes >= 2, "probe needs k ≥ 1 and at least two classes");
    ensure!(!labels.is_empty(), "probe needs at least one subject");
    ensure!(
        x.len() == labels.len() * k,
        "probe input has {} values for {} subjects of width {k}",
        x.len(),
        labels.len()
    );
    ensure!(
        labels.iter().all(|&y| y < classes),
        "label out of range for {classes} classes"
    );
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite probe input".into()));
    }
    Ok(())
}

/// Mean cross-entropy of the probe and, optionally, its gradient.
pub fn probe_loss_grad(
    params: &ProbeParams,
    x: &[f64],
    labels: &[usize],
    grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let (k, c) = (params.k, params.classes);
    let n = labels.len() as f64;
    let mut logits = vec![0.0; c];
    let mut loss = 0.0;
    let mut grad = grad;
    if let Some((gw, gb)) = grad.as_mut() {
        gw.fill(0.0);
        gb.fill(0.0);
    }
    for (row, &y) in x.chunks(k).zip(labels) {
        params.logits_into(row, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];
        if let Some((gw, gb)) = grad.as_mut() {
            for l in logits.iter_mut() {
                *l = (*l - lse).exp() / n;
            }
            logits[y] -= 1.0 / n;
            for (b, g) in gb.iter_mut().zip(&logits) {
                *b += g;
            }
            for (&xi, gr) in row.iter().zip(gw.chunks_exact_mut(c)) {
                for (w, g) in gr.iter_mut().zip(&logits) {
                    *w += xi * g;
                }
            }
        }
    }
    loss / n
}

fn descend(
    x: &[f64],
    k: usize,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ProbeParams> {
    check_inputs(x, k, labels, classes)?;
    ensure!(config.steps >= 1, "probe needs at least one step");
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::DegenerateSupport(format!(
            "all {} support subjects have label {}",
            labels.len(),
            labels[0]
        )));
    }
    let lr = config.lr.unwrap_or_else(|| descent_lr(x, k));
    ensure!(lr.is_finite() && lr > 0.0, "probe learning rate must be positive");
    let mut p = ProbeParams::zeros(k, classes);
    let mut gw = vec![0.0; k * classes];
    let mut gb = vec![0.0; classes];
    for _ in 0..config.steps {
        let loss = probe_loss_grad(&p, x, labels, Some((&mut gw, &mut gb)));
        if let Some(t) = trace.as_mut() {
            t.push(loss);
        }
        for (w, g) in p.w.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        for (b, g) in p.b.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
    }
    if let Some(t) = trace {
        t.push(probe_loss_grad(&p, x, labels, None));
    }
    Ok(p)
}

/// Fits a probe and records the support loss before each step and after
/// the last (length `steps + 1`).
pub fn fit_probe_trace(
    x: &[f64],
    k: usize,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<(ProbeParams, Vec<f64>)> {
    let mut trace = Vec::with_capacity(config.steps + 1);
    let p = descend(x, k, labels, classes, config, Some(&mut trace))?;
    Ok((p, trace))
}

pub fn fit_probe(x: &[f64], k: usize, labels: &[usize], classes: usize, config: &ProbeConfig) -> Result<ProbeParams> {
    descend(x, k, labels, classes, config, None)
}

/// `−mean cross-entropy` of the probe on the query subjects.
pub fn probe_reward(params: &ProbeParams, x: &[f64], labels: &[usize]) -> Result<f64> {
    ensure!(!labels.is_empty(), "probe reward needs a nonempty query");
    check_inputs(x, params.k, labels, params.classes)?;
    Ok(-probe_loss_grad(params, x, labels, None))
}

/// Row-major `rows × |set|` block of a feature matrix.
pub fn gather_features(z: &FeatureMatrix, rows: &[usize], set: &FeatureSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * set.len());
    for &r in rows {
        let row = z.row(r);
        out.extend(set.indices().iter().map(|&f| row[f]));
    }
    out
}

/// The support/query split used to compute rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardContext<'a> {
    pub z: &'a FeatureMatrix,
    pub labels: &'a [usize],
    pub classes: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub config: ProbeConfig,
}

impl<'a> RewardContext<'a> {
    pub fn new(
        z: &'a FeatureMatrix,
        labels: &'a [usize],
        classes: usize,
        support: Vec<usize>,
        query: Vec<usize>,
        config: ProbeConfig,
    ) -> Result<Self> {
        ensure!(
            !support.is_empty() && !query.is_empty(),
            "support and query must be nonempty"
        );
        for &i in support.iter().chain(&query) {
            ensure!(i < z.rows() && i < labels.len(), "subject index {i} out of range");
        }
        let mut s = support.clone();
        s.sort_unstable();
        ensure!(
            query.iter().all(|q| s.binary_search(q).is_err()),
            "support and query draws must be disjoint"
        );
        let support_labels = support.iter().map(|&i| labels[i]).collect();
        let query_labels = query.iter().map(|&i| labels[i]).collect();
        Ok(Self {
            z,
            labels,
            classes,
            support,
            query,
            support_labels,
            query_labels,
            config,
        })
    }

    /// `R(S)`: fit on the support rows of `S`, score on the query rows.
    pub fn reward(&self, set: &FeatureSet) -> Result<f64> {
        ensure!(
            set.indices().last().is_some_and(|&i| i < self.z.cols()),
            "feature set {:?} out of range for F = {}",
            set.indices(),
            self.z.cols()
        );
        let xs = gather_features(self.z, &self.support, set);
        let p = fit_probe(&xs, set.len(), &self.support_labels, self.classes, &self.config)?;
        let xq = gather_features(self.z, &self.query, set);
        probe_reward(&p, &xq, &self.query_labels)
    }
}

/// One-shot `R(S)` for explicit support and query subjects.
pub fn reward_for_set(
    set: &FeatureSet,
    support: &[usize],
    query: &[usize],
    z: &FeatureMatrix,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<f64> {
    RewardContext::new(z, labels, classes, support.to_vec(), query.to_vec(), *config)?.reward(set)
}
