//! Comparison baselines: random sets, all features, marginal top-k.
//! Each refits its own linear head on the training split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{draw_support_query, Dataset};
use crate::error::{ensure, Result};
use crate::numkit::tensor::softmax_in_place;
use crate::numkit::{Adam, AdamConfig, DenseTensor};
use crate::probe::{gather_features, ProbeConfig, RewardContext};
use crate::retrieval::{sample_sets_from, ModelBundle};
use crate::rng::{derive_seed, rng_for, stream};
use crate::setenc::FeatureSet;

use super::{Classifier, EvalReport, Prediction};

/// Full-batch Adam on softmax cross-entropy with L2 on the weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            l2: 1e-3,
        }
    }
}

/// Fits a `d → C` linear classifier on row-major `x` (`n × d`).
pub fn fit_linear_head(
    x: &[f64],
    d: usize,
    labels: &[usize],
    classes: usize,
    config: &HeadConfig,
) -> Result<Classifier> {
    let n = labels.len();
    ensure!(n >= 1 && d >= 1, "linear head needs data");
    ensure!(
        x.len() == n * d,
        "feature matrix has {} values, expected {}",
        x.len(),
        n * d
    );
    ensure!(labels.iter().all(|&y| y < classes), "label out of range");
    let mut head = Classifier::zeros(d, classes);
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &head.params,
    );
    let mut gw = vec![0.0; d * classes];
    let mut gb = vec![0.0; classes];
    for _ in 0..config.steps {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        for (row, &y) in x.chunks_exact(d).zip(labels) {
            let mut p = head.logits(row)?;
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for (i, &xi) in row.iter().enumerate() {
                for (g, &pc) in gw[i * classes..(i + 1) * classes].iter_mut().zip(&p) {
                    *g += xi * pc;
                }
            }
            for (g, &pc) in gb.iter_mut().zip(&p) {
                *g += pc;
            }
        }
        let w = head.params.get(0).data();
        let grads = [
            DenseTensor::matrix(
                d,
                classes,
                gw.iter().zip(w).map(|(g, wv)| g / n as f64 + config.l2 * wv).collect(),
            )?,
            DenseTensor::new(vec![classes], gb.iter().map(|g| g / n as f64).collect())?,
        ];
        opt.step(&mut head.params, &grads)?;
    }
    Ok(head)
}

fn report_on(
    method: &str,
    k: usize,
    ds: &Dataset,
    head: &Classifier,
    rows: impl Fn(usize) -> Vec<f64>,
) -> Result<EvalReport> {
    ensure!(!ds.validation.is_empty(), "baselines need a nonempty validation split");
    let preds = ds
        .validation
        .iter()
        .map(|&i| {
            Ok((
                ds.subject_ids[i].clone(),
                ds.labels[i],
                Prediction::from_logits(head.logits(&rows(i))?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(method, k, ds.classes, &preds)
}

fn fit_on_train(ds: &Dataset, d: usize, head: &HeadConfig, rows: impl Fn(usize) -> Vec<f64>) -> Result<Classifier> {
    let x: Vec<f64> = ds.train.iter().flat_map(|&i| rows(i)).collect();
    let y: Vec<usize> = ds.train.iter().map(|&i| ds.labels[i]).collect();
    fit_linear_head(&x, d, &y, ds.classes, head)
}

/// One uniform random `k`-set per subject replaces the retrieved set; the
/// embeddings come from the bundle's encoder and a fresh head is fitted on
/// the training subjects.
pub fn baseline_random_sets(bundle: &ModelBundle, ds: &Dataset, seed: u64, head: &HeadConfig) -> Result<EvalReport> {
    let k = bundle.config.k;
    let universe = bundle.config.universe(ds.feature_count());
    let embed = |i: usize| -> Result<Vec<f64>> {
        let mut rng = rng_for(seed, &[stream::BASELINE, 0, i as u64]);
        let set = sample_sets_from(&universe, k, 1, &mut rng)?.remove(0);
        Ok(bundle.embed(ds.z.row(i), &set)?.0)
    };
    let all: Vec<Vec<f64>> = (0..ds.len()).into_par_iter().map(embed).collect::<Result<_>>()?;
    let d = bundle.encoder.config.out_dim;
    let fitted = fit_on_train(ds, d, head, |i| all[i].clone())?;
    report_on("rs", k, ds, &fitted, |i| all[i].clone())
}

/// Linear head on the full z-scored feature vector.
pub fn baseline_all_radiomics(ds: &Dataset, head: &HeadConfig) -> Result<EvalReport> {
    let f = ds.feature_count();
    let fitted = fit_on_train(ds, f, head, |i| ds.z.row(i).to_vec())?;
    let mut report = report_on("all_radiomics", f, ds, &fitted, |i| ds.z.row(i).to_vec())?;
    report.flags.push(format!("k=F={f}"));
    Ok(report)
}

/// Support/query draws used to rank single features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginalConfig {
    pub draws: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        Self {
            draws: 5,
            n_support: 24,
            n_query: 24,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

/// Single-feature probe reward of every feature, averaged over draws.
pub fn marginal_relevance(ds: &Dataset, config: &MarginalConfig) -> Result<Vec<f64>> {
    ensure!(config.draws >= 1, "relevance needs at least one draw");
    let contexts = (0..config.draws)
        .map(|d| {
            let s = derive_seed(config.seed, &[stream::BASELINE, 1, d as u64]);
            let (sup, qry) = draw_support_query(&ds.train, &ds.labels, config.n_support, config.n_query, s)?;
            RewardContext::new(&ds.z, &ds.labels, ds.classes, sup, qry, config.probe)
        })
        .collect::<Result<Vec<_>>>()?;
    (0..ds.feature_count())
        .into_par_iter()
        .map(|f| {
            let set = FeatureSet::new(vec![f])?;
            let mut acc = 0.0;
            for ctx in &contexts {
                acc += ctx.reward(&set)?;
            }
            Ok(acc / contexts.len() as f64)
        })
        .collect()
}

/// Indices of the `k` largest values, ties to the lower index, ascending.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut top = order[..k.min(values.len())].to_vec();
    top.sort_unstable();
    top
}

/// Global top-`k` features by marginal relevance, then a linear head on
/// them. Returns the report and the selected indices.
pub fn baseline_marginal_topk(
    ds: &Dataset,
    k: usize,
    config: &MarginalConfig,
    head: &HeadConfig,
) -> Result<(EvalReport, Vec<usize>)> {
    ensure!(k >= 1 && k <= ds.feature_count(), "need 1 ≤ k ≤ F");
    let relevance = marginal_relevance(ds, config)?;
    let chosen = top_k_indices(&relevance, k);
    let set = FeatureSet::new(chosen.clone())?;
    let rows = |i: usize| gather_features(&ds.z, &[i], &set);
    let fitted = fit_on_train(ds, k, head, rows)?;
    let report = report_on("marginal_topk", k, ds, &fitted, rows)?;
    Ok((report, chosen))
}
