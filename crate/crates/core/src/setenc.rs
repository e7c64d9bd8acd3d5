//! Permutation-invariant set encoder.
//!
//! Each selected feature becomes a token `concat(z, roi_emb, family_emb,
//! feature_emb)`; a two-layer MLP maps every token to `out_dim` values and
//! the set embedding is their mean. Tokens are pooled in canonical order
//! (by metadata ids, then value), so any permutation of the input tokens
//! produces a bitwise-identical embedding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numkit::{glorot_uniform, DenseTensor, ParamSet, Tape, Var};
use crate::radiomics::{DescriptorTable, FEATURES_PER_ROI};
use crate::rng::Rng;

/// A sorted, duplicate-free list of feature indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureSet(Vec<usize>);

impl FeatureSet {
    /// Accepts strictly increasing indices only.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        ensure!(!indices.is_empty(), "a feature set needs at least one index");
        ensure!(
            indices.windows(2).all(|w| w[0] < w[1]),
            "feature set indices must be strictly increasing, got {indices:?}"
        );
        Ok(Self(indices))
    }

    /// Sorts the indices first; duplicates are still rejected.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// Checks `|S| = k` and every index `< f`.
    pub fn validate(&self, k: usize, f: usize) -> Result<()> {
        ensure!(
            self.len() == k,
            "feature set has {} indices, expected k = {k}",
            self.len()
        );
        ensure!(
            self.0.last().is_some_and(|&i| i < f),
            "feature set {:?} has an index outside [0, {f})",
            self.0
        );
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for FeatureSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureSet> for Vec<usize> {
    fn from(s: FeatureSet) -> Self {
        s.0
    }
}

/// One selected feature: its z-scored value plus metadata ids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureToken {
    pub z_value: f64,
    pub roi_id: usize,
    pub family_id: usize,
    pub feature_id: usize,
}

impl FeatureToken {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.roi_id, self.family_id, self.feature_id)
            .cmp(&(other.roi_id, other.family_id, other.feature_id))
            .then(self.z_value.total_cmp(&other.z_value))
    }
}

/// Tokens for `set`, in index order.
pub fn tokenize(z_row: &[f64], set: &FeatureSet, table: &DescriptorTable) -> Result<Vec<FeatureToken>> {
    ensure!(
        z_row.len() == table.len(),
        "feature row has {} values, descriptor table {}",
        z_row.len(),
        table.len()
    );
    set.indices()
        .iter()
        .map(|&i| {
            let (roi_id, family_id, feature_id) = table
                .ids(i)
                .ok_or_else(|| Error::Contract(format!("feature index {i} out of range for F = {}", table.len())))?;
            Ok(FeatureToken {
                z_value: z_row[i],
                roi_id,
                family_id,
                feature_id,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEmbedding(pub Vec<f64>);

impl SetEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub k: usize,
    pub roi_count: usize,
    pub family_count: usize,
    pub feature_ids: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl EncoderConfig {
    /// Default widths (embedding 8, hidden 64, output 64) for a table.
    pub fn for_table(table: &DescriptorTable, k: usize) -> Self {
        Self {
            k,
            roi_count: table.roi_count(),
            family_count: 4,
            feature_ids: FEATURES_PER_ROI,
            embed_dim: 8,
            hidden: 64,
            out_dim: 64,
        }
    }

    pub fn token_width(&self) -> usize {
        1 + 3 * self.embed_dim
    }
}

const ROI_EMB: usize = 0;
const FAMILY_EMB: usize = 1;
const FEATURE_EMB: usize = 2;
const W1: usize = 3;
const B1: usize = 4;
const W2: usize = 5;
const B2: usize = 6;

/// Encoder parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct SetEncoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl SetEncoder {
    fn build(config: EncoderConfig, mut init: impl FnMut(usize, usize) -> DenseTensor) -> Self {
        let e = config.embed_dim;
        let mut params = ParamSet::new();
        params.push("enc.roi_emb", init(config.roi_count, e));
        params.push("enc.family_emb", init(config.family_count, e));
        params.push("enc.feature_emb", init(config.feature_ids, e));
        params.push("enc.w1", init(config.token_width(), config.hidden));
        params.push("enc.b1", DenseTensor::zeros(&[config.hidden]));
        params.push("enc.w2", init(config.hidden, config.out_dim));
        params.push("enc.b2", DenseTensor::zeros(&[config.out_dim]));
        Self { config, params }
    }

    /// Glorot-uniform weights and embeddings, zero biases.
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Self {
        Self::build(config, |r, c| glorot_uniform(r, c, rng))
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        Self::build(config, |r, c| DenseTensor::zeros(&[r, c]))
    }

    /// Replaces the parameters, checking names and shapes.
    pub fn with_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let template = Self::zeros(config);
        template.params.ensure_compatible(&params)?;
        Ok(Self { config, params })
    }

    fn check_ids(&self, t: &FeatureToken) -> Result<()> {
        let c = &self.config;
        ensure!(
            t.roi_id < c.roi_count && t.family_id < c.family_count && t.feature_id < c.feature_ids,
            "token ids ({}, {}, {}) out of table bounds",
            t.roi_id,
            t.family_id,
            t.feature_id
        );
        ensure!(t.z_value.is_finite(), "token value must be finite");
        Ok(())
    }

    /// The first-layer input of one token.
    fn token_input(&self, t: &FeatureToken, out: &mut Vec<f64>) {
        out.clear();
        out.push(t.z_value);
        out.extend_from_slice(self.params.get(ROI_EMB).row_slice(t.roi_id));
        out.extend_from_slice(self.params.get(FAMILY_EMB).row_slice(t.family_id));
        out.extend_from_slice(self.params.get(FEATURE_EMB).row_slice(t.feature_id));
    }

    /// Post-ReLU hidden activations of one token.
    pub fn token_hidden(&self, t: &FeatureToken) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.config.token_width());
        self.token_input(t, &mut x);
        let w1 = self.params.get(W1).data();
        let mut h = self.params.get(B1).data().to_vec();
        let hd = self.config.hidden;
        for (i, &xi) in x.iter().enumerate() {
            for (hj, &w) in h.iter_mut().zip(&w1[i * hd..(i + 1) * hd]) {
                *hj += xi * w;
            }
        }
        for v in &mut h {
            *v = v.max(0.0);
        }
        h
    }

    /// Applies the output layer to a pooled hidden vector.
    pub fn output_layer(&self, pooled_hidden: &[f64]) -> Vec<f64> {
        let w2 = self.params.get(W2).data();
        let od = self.config.out_dim;
        let mut out = self.params.get(B2).data().to_vec();
        for (i, &hi) in pooled_hidden.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&w2[i * od..(i + 1) * od]) {
                *o += hi * w;
            }
        }
        out
    }

    /// Embeds exactly `k` tokens.
    pub fn encode_set(&self, tokens: &[FeatureToken]) -> Result<SetEmbedding> {
        ensure!(
            tokens.len() == self.config.k,
            "encoder expects k = {} tokens, got {}",
            self.config.k,
            tokens.len()
        );
        self.encode_any(tokens)
    }

    /// Embeds any nonempty token list (the pooled mean is defined for all sizes).
    pub fn encode_any(&self, tokens: &[FeatureToken]) -> Result<SetEmbedding> {
        ensure!(!tokens.is_empty(), "cannot encode an empty token list");
        for t in tokens {
            self.check_ids(t)?;
        }
        let mut order: Vec<&FeatureToken> = tokens.iter().collect();
        order.sort_by(|a, b| a.canonical_cmp(b));
        // The output layer is affine, so pooling hidden activations first
        // and projecting once equals the mean of per-token outputs.
        let mut pooled = vec![0.0; self.config.hidden];
        for t in order {
            for (p, h) in pooled.iter_mut().zip(self.token_hidden(t)) {
                *p += h;
            }
        }
        let n = tokens.len() as f64;
        for p in &mut pooled {
            *p /= n;
        }
        Ok(SetEmbedding(self.output_layer(&pooled)))
    }

    /// Records batched encoding of many sets of one subject on a tape.
    /// `vars` are this encoder's bound parameters; returns an
    /// `n_sets × out_dim` value.
    pub fn encode_on_tape(&self, tape: &mut Tape, vars: &[Var], batch: &TokenBatch) -> Result<Var> {
        let z = tape.constant(batch.z.clone());
        self.encode_on_tape_with(tape, vars, z, batch)
    }

    /// As [`SetEncoder::encode_on_tape`] with the value column supplied as a
    /// tape variable (so gradients can reach token values).
    pub fn encode_on_tape_with(&self, tape: &mut Tape, vars: &[Var], z: Var, batch: &TokenBatch) -> Result<Var> {
        ensure!(vars.len() == self.params.len(), "encoder binding has the wrong arity");
        let roi = tape.gather_rows(vars[ROI_EMB], &batch.roi_ids)?;
        let fam = tape.gather_rows(vars[FAMILY_EMB], &batch.family_ids)?;
        let feat = tape.gather_rows(vars[FEATURE_EMB], &batch.feature_ids)?;
        let x = tape.concat_cols(&[z, roi, fam, feat])?;
        let h = tape.linear(x, vars[W1], vars[B1])?;
        let h = tape.relu(h);
        let pooled = tape.pool_mean(h, batch.groups.clone())?;
        tape.linear(pooled, vars[W2], vars[B2])
    }

    /// Per-feature first-layer contribution of the metadata embeddings plus
    /// bias, so that a token's hidden state is `relu(z · w_z + meta[f])`.
    pub fn metadata_table(&self, table: &DescriptorTable) -> Result<MetadataTable> {
        let hd = self.config.hidden;
        let e = self.config.embed_dim;
        let w1 = self.params.get(W1).data();
        let mut meta = vec![0.0; table.len() * hd];
        let mut x = Vec::with_capacity(self.config.token_width());
        for f in 0..table.len() {
            let (r, fam, j) = table.ids(f).expect("index within table");
            self.check_ids(&FeatureToken {
                z_value: 0.0,
                roi_id: r,
                family_id: fam,
                feature_id: j,
            })?;
            self.token_input(
                &FeatureToken {
                    z_value: 0.0,
                    roi_id: r,
                    family_id: fam,
                    feature_id: j,
                },
                &mut x,
            );
            let row = &mut meta[f * hd..(f + 1) * hd];
            row.copy_from_slice(self.params.get(B1).data());
            for (i, &xi) in x.iter().enumerate().skip(1) {
                for (m, &w) in row.iter_mut().zip(&w1[i * hd..(i + 1) * hd]) {
                    *m += xi * w;
                }
            }
        }
        debug_assert_eq!(x.len(), 1 + 3 * e);
        Ok(MetadataTable {
            hidden: hd,
            w_z: w1[..hd].to_vec(),
            meta,
        })
    }
}

/// Subject-independent part of every feature's first-layer pre-activation.
#[derive(Clone, Debug)]
pub struct MetadataTable {
    hidden: usize,
    w_z: Vec<f64>,
    meta: Vec<f64>,
}

impl MetadataTable {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Writes `relu(z · w_z + meta[f])` into `out`.
    pub fn token_hidden(&self, f: usize, z: f64, out: &mut [f64]) {
        let m = &self.meta[f * self.hidden..(f + 1) * self.hidden];
        for ((o, &mi), &wz) in out.iter_mut().zip(m).zip(&self.w_z) {
            *o = (z * wz + mi).max(0.0);
        }
    }
}

/// The tokens needed to encode several sets of one subject: the union of
/// their features (in index order) and, per set, the positions to pool.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub features: Vec<usize>,
    pub z: DenseTensor,
    pub roi_ids: Vec<usize>,
    pub family_ids: Vec<usize>,
    pub feature_ids: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl TokenBatch {
    pub fn new(z_row: &[f64], sets: &[&FeatureSet], table: &DescriptorTable) -> Result<Self> {
        ensure!(!sets.is_empty(), "token batch needs at least one set");
        ensure!(
            z_row.len() == table.len(),
            "feature row does not match the descriptor table"
        );
        let mut position = vec![usize::MAX; table.len()];
        for s in sets {
            for &i in s.indices() {
                ensure!(
                    i < table.len(),
                    "feature index {i} out of range for F = {}",
                    table.len()
                );
                position[i] = 0;
            }
        }
        let mut features = Vec::new();
        for (i, p) in position.iter_mut().enumerate() {
            if *p == 0 {
                *p = features.len();
                features.push(i);
            }
        }
        let mut roi_ids = Vec::with_capacity(features.len());
        let mut family_ids = Vec::with_capacity(features.len());
        let mut feature_ids = Vec::with_capacity(features.len());
        for &f in &features {
            let (r, fam, j) = table.ids(f).expect("index within table");
            roi_ids.push(r);
            family_ids.push(fam);
            feature_ids.push(j);
        }
        let z = DenseTensor::matrix(features.len(), 1, features.iter().map(|&f| z_row[f]).collect())?;
        let groups = sets
            .iter()
            .map(|s| s.indices().iter().map(|&i| position[i]).collect())
            .collect();
        Ok(Self {
            features,
            z,
            roi_ids,
            family_ids,
            feature_ids,
            groups,
        })
    }
}
