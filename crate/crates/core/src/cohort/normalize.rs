use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::radiomics::FeatureVector;
use crate::rng::{rng_for, stream};

pub const Z_CLAMP: f64 = 8.0;
pub const MIN_STD: f64 = 1e-12;

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Statistics over the rows listed in `fit_rows`.
    pub fn fit(features: &[FeatureVector], fit_rows: &[usize]) -> Result<Self> {
        ensure!(!fit_rows.is_empty(), "normalization needs a nonempty training split");
        let width = features
            .first()
            .map(FeatureVector::len)
            .ok_or_else(|| Error::Contract("no feature vectors".into()))?;
        for (i, f) in features.iter().enumerate() {
            ensure!(
                f.len() == width,
                "feature vector {i} has {} values, expected {width}",
                f.len()
            );
        }
        let n = fit_rows.len() as f64;
        let mut mean = vec![0.0; width];
        for &r in fit_rows {
            ensure!(r < features.len(), "row {r} out of range");
            for (m, v) in mean.iter_mut().zip(features[r].values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for &r in fit_rows {
            for ((s, v), m) in var.iter_mut().zip(features[r].values()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.into_iter().map(|s| (s / n).sqrt()).collect();
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature statistics".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn z(&self, feature: usize, value: f64) -> f64 {
        let s = self.std[feature];
        if s < MIN_STD {
            0.0
        } else {
            ((value - self.mean[feature]) / s).clamp(-Z_CLAMP, Z_CLAMP)
        }
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        ensure!(
            v.len() == self.len(),
            "feature vector has {} values, statistics cover {}",
            v.len(),
            self.len()
        );
        Ok(v.values().iter().enumerate().map(|(j, &x)| self.z(j, x)).collect())
    }
}

/// Row-major subjects × features matrix of z-scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(rows > 0 && cols > 0, "feature matrix must be nonempty");
        ensure!(
            data.len() == rows * cols,
            "feature matrix needs {} values, got {}",
            rows * cols,
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == cols), "ragged feature rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Fits statistics on `train_rows` and z-scores every subject with them.
pub fn normalize_features(
    features: Option<&[FeatureVector]>,
    train_rows: &[usize],
) -> Result<(FeatureMatrix, FeatureStats)> {
    let features = features.ok_or_else(|| Error::Contract("features have not been extracted".into()))?;
    let stats = FeatureStats::fit(features, train_rows)?;
    let rows = features.iter().map(|f| stats.apply(f)).collect::<Result<Vec<_>>>()?;
    Ok((FeatureMatrix::from_rows(&rows)?, stats))
}

/// Overwrites each `targets` feature with a noisy copy of `source`:
/// `v_t = v_s + noise · std(v_s) · ε`. Produces a cohort whose informative
/// signal is spread over near-duplicate features.
pub fn plant_clones(
    features: &mut [FeatureVector],
    source: usize,
    targets: &[usize],
    noise: f64,
    seed: u64,
) -> Result<()> {
    let width = features.first().map_or(0, FeatureVector::len);
    ensure!(source < width, "clone source {source} out of range");
    ensure!(
        noise.is_finite() && noise >= 0.0,
        "clone noise must be finite and non-negative"
    );
    for &t in targets {
        ensure!(t < width && t != source, "invalid clone target {t}");
    }
    let all: Vec<usize> = (0..features.len()).collect();
    let stats = FeatureStats::fit(features, &all)?;
    let sd = stats.std[source];
    for (i, f) in features.iter_mut().enumerate() {
        for &t in targets {
            let mut rng = rng_for(seed, &[stream::CLONES, i as u64, t as u64]);
            let eps: f64 = StandardNormal.sample(&mut rng);
            f.0[t] = f.0[source] + noise * sd * eps;
        }
    }
    Ok(())
}
