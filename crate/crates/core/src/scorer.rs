//! Context-conditioned utility scorer.
//!
//! The subject context is a fixed summary of the volume: a 4×4×4 block
//! grid with per-block mean and standard deviation (128 values). The scorer
//! z-normalizes it, projects it linearly to 64 values, concatenates the set
//! embedding and applies a two-layer MLP that ends in one scalar.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numkit::{glorot_uniform, DenseTensor, ParamSet, Tape, Var};
use crate::radiomics::{DescriptorTable, Volume};
use crate::rng::Rng;
use crate::setenc::{FeatureSet, MetadataTable, SetEmbedding, SetEncoder};

pub const CONTEXT_GRID: usize = 4;
pub const CONTEXT_LEN: usize = 2 * CONTEXT_GRID * CONTEXT_GRID * CONTEXT_GRID;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Start offsets of `parts` blocks along an axis of length `len`: blocks
/// are `len / parts` long and the last one absorbs the remainder.
fn block_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = (len / parts).max(1);
    (0..parts)
        .map(|b| {
            let lo = (b * step).min(len.saturating_sub(1));
            let hi = if b + 1 == parts { len } else { ((b + 1) * step).min(len) };
            (lo, hi.max(lo + 1))
        })
        .collect()
}

/// Per-block `[mean, std]` pairs over the 4×4×4 grid, blocks in z-y-x order.
pub fn encode_context(volume: &Volume) -> ContextVector {
    let [d, h, w] = volume.dims();
    let (bz, by, bx) = (
        block_bounds(d, CONTEXT_GRID),
        block_bounds(h, CONTEXT_GRID),
        block_bounds(w, CONTEXT_GRID),
    );
    let mut out = Vec::with_capacity(CONTEXT_LEN);
    for &(z0, z1) in &bz {
        for &(y0, y1) in &by {
            for &(x0, x1) in &bx {
                let mut sum = 0.0;
                let mut n = 0.0;
                for z in z0..z1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += f64::from(volume.get(z, y, x));
                            n += 1.0;
                        }
                    }
                }
                let mean = sum / n;
                let mut ss = 0.0;
                for z in z0..z1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let dv = f64::from(volume.get(z, y, x)) - mean;
                            ss += dv * dv;
                        }
                    }
                }
                out.push(mean);
                out.push((ss / n).sqrt());
            }
        }
    }
    ContextVector(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub context_len: usize,
    pub context_proj: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            context_len: CONTEXT_LEN,
            context_proj: 64,
            embed_dim: 64,
            hidden: 128,
        }
    }
}

const W_CTX: usize = 0;
const B_CTX: usize = 1;
const W_H: usize = 2;
const B_H: usize = 3;
const W_O: usize = 4;
const B_O: usize = 5;

/// Scorer parameters ψ.
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    pub config: ScorerConfig,
    pub params: ParamSet,
}

impl Scorer {
    fn build(config: ScorerConfig, mut init: impl FnMut(usize, usize) -> DenseTensor) -> Self {
        let mut params = ParamSet::new();
        params.push("scr.w_ctx", init(config.context_len, config.context_proj));
        params.push("scr.b_ctx", DenseTensor::zeros(&[config.context_proj]));
        params.push("scr.w_h", init(config.context_proj + config.embed_dim, config.hidden));
        params.push("scr.b_h", DenseTensor::zeros(&[config.hidden]));
        params.push("scr.w_o", init(config.hidden, 1));
        params.push("scr.b_o", DenseTensor::zeros(&[1]));
        Self { config, params }
    }

    pub fn init(config: ScorerConfig, rng: &mut Rng) -> Self {
        Self::build(config, |r, c| glorot_uniform(r, c, rng))
    }

    pub fn zeros(config: ScorerConfig) -> Self {
        Self::build(config, |r, c| DenseTensor::zeros(&[r, c]))
    }

    pub fn with_params(config: ScorerConfig, params: ParamSet) -> Result<Self> {
        Self::zeros(config).params.ensure_compatible(&params)?;
        Ok(Self { config, params })
    }

    /// `b_h + W_h[ctx rows]ᵀ (W_ctxᵀ c + b_ctx)`: the hidden pre-activation
    /// contributed by the context.
    fn context_hidden(&self, context: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let mut proj = self.params.get(B_CTX).data().to_vec();
        let w_ctx = self.params.get(W_CTX).data();
        for (i, &ci) in context.iter().enumerate() {
            for (p, &w) in proj
                .iter_mut()
                .zip(&w_ctx[i * c.context_proj..(i + 1) * c.context_proj])
            {
                *p += ci * w;
            }
        }
        let w_h = self.params.get(W_H).data();
        let mut h = self.params.get(B_H).data().to_vec();
        for (i, &pi) in proj.iter().enumerate() {
            for (hj, &w) in h.iter_mut().zip(&w_h[i * c.hidden..(i + 1) * c.hidden]) {
                *hj += pi * w;
            }
        }
        h
    }

    fn output(&self, pre: &[f64]) -> f64 {
        let w_o = self.params.get(W_O).data();
        let mut s = self.params.get(B_O).data()[0];
        for (h, w) in pre.iter().zip(w_o) {
            s += h.max(0.0) * w;
        }
        s
    }

    /// Utility of one set embedding for a (normalized) context.
    pub fn score(&self, context: &[f64], embedding: &SetEmbedding) -> Result<f64> {
        let c = &self.config;
        ensure!(
            context.len() == c.context_len,
            "context has {} values, scorer expects {}",
            context.len(),
            c.context_len
        );
        ensure!(
            embedding.0.len() == c.embed_dim,
            "embedding has {} values, scorer expects {}",
            embedding.0.len(),
            c.embed_dim
        );
        let mut pre = self.context_hidden(context);
        let w_h = self.params.get(W_H).data();
        for (i, &e) in embedding.0.iter().enumerate() {
            let row = c.context_proj + i;
            for (hj, &w) in pre.iter_mut().zip(&w_h[row * c.hidden..(row + 1) * c.hidden]) {
                *hj += e * w;
            }
        }
        Ok(self.output(&pre))
    }

    /// Records scoring of `embeddings` (`n × embed_dim`) against one
    /// context (`1 × context_len`); returns `n × 1`.
    pub fn score_on_tape(&self, tape: &mut Tape, vars: &[Var], context: Var, embeddings: Var) -> Result<Var> {
        ensure!(vars.len() == self.params.len(), "scorer binding has the wrong arity");
        let n = tape.value(embeddings).rows();
        let proj = tape.linear(context, vars[W_CTX], vars[B_CTX])?;
        let proj = tape.repeat_rows(proj, n)?;
        let x = tape.concat_cols(&[proj, embeddings])?;
        let h = tape.linear(x, vars[W_H], vars[B_H])?;
        let h = tape.relu(h);
        tape.linear(h, vars[W_O], vars[B_O])
    }
}

/// Scores many sets of one subject without building a tape.
///
/// With `h_f` the hidden state of feature `f`'s token, the scorer's hidden
/// pre-activation for a set `S` is `base + mean_{f∈S} u_f`, where
/// `u_f = W_h[emb rows]ᵀ W_2ᵀ h_f` is tabulated once per subject.
#[derive(Clone, Debug)]
pub struct FastScorer {
    hidden: usize,
    base: Vec<f64>,
    u: Vec<f64>,
    w_o: Vec<f64>,
    b_o: f64,
}

/// Subject-independent products reused by every [`FastScorer`].
#[derive(Clone, Debug)]
pub struct FastScorerTemplate {
    meta: MetadataTable,
    /// `W_2 · W_h[emb rows]`, `enc_hidden × scorer_hidden`.
    combined: Vec<f64>,
    /// `W_h[emb rows]ᵀ b_2`.
    bias: Vec<f64>,
    enc_hidden: usize,
}

impl FastScorerTemplate {
    pub fn new(encoder: &SetEncoder, scorer: &Scorer, table: &DescriptorTable) -> Result<Self> {
        let sc = &scorer.config;
        ensure!(
            encoder.config.out_dim == sc.embed_dim,
            "encoder output {} does not match scorer input {}",
            encoder.config.out_dim,
            sc.embed_dim
        );
        let meta = encoder.metadata_table(table)?;
        let eh = encoder.config.hidden;
        let w2 = encoder.params.by_name("enc.w2").expect("encoder w2").data();
        let b2 = encoder.params.by_name("enc.b2").expect("encoder b2").data();
        let w_h = scorer.params.get(W_H).data();
        let emb_rows = &w_h[sc.context_proj * sc.hidden..];
        let mut combined = vec![0.0; eh * sc.hidden];
        crate::numkit::tensor::matmul_into(w2, emb_rows, &mut combined, eh, sc.embed_dim, sc.hidden);
        let mut bias = vec![0.0; sc.hidden];
        crate::numkit::tensor::matmul_into(b2, emb_rows, &mut bias, 1, sc.embed_dim, sc.hidden);
        Ok(Self {
            meta,
            combined,
            bias,
            enc_hidden: eh,
        })
    }

    /// Tabulates `u_f` for every feature of one subject.
    pub fn for_subject(&self, scorer: &Scorer, z_row: &[f64], context: &[f64]) -> Result<FastScorer> {
        let sc = &scorer.config;
        ensure!(context.len() == sc.context_len, "context length mismatch");
        let mut base = scorer.context_hidden(context);
        for (b, x) in base.iter_mut().zip(&self.bias) {
            *b += x;
        }
        let mut u = vec![0.0; z_row.len() * sc.hidden];
        let mut h = vec![0.0; self.enc_hidden];
        for (f, &z) in z_row.iter().enumerate() {
            self.meta.token_hidden(f, z, &mut h);
            crate::numkit::tensor::matmul_into(
                &h,
                &self.combined,
                &mut u[f * sc.hidden..(f + 1) * sc.hidden],
                1,
                self.enc_hidden,
                sc.hidden,
            );
        }
        Ok(FastScorer {
            hidden: sc.hidden,
            base,
            u,
            w_o: scorer.params.get(W_O).data().to_vec(),
            b_o: scorer.params.get(B_O).data()[0],
        })
    }
}

impl FastScorer {
    pub fn score(&self, set: &FeatureSet) -> f64 {
        let mut acc = vec![0.0; self.hidden];
        self.score_with(set, &mut acc)
    }

    /// As [`FastScorer::score`], reusing `acc` as scratch space.
    pub fn score_with(&self, set: &FeatureSet, acc: &mut [f64]) -> f64 {
        acc.fill(0.0);
        for &f in set.indices() {
            for (a, &v) in acc.iter_mut().zip(&self.u[f * self.hidden..(f + 1) * self.hidden]) {
                *a += v;
            }
        }
        let inv = 1.0 / set.len() as f64;
        let mut s = self.b_o;
        for ((a, b), w) in acc.iter().zip(&self.base).zip(&self.w_o) {
            s += (a * inv + b).max(0.0) * w;
        }
        s
    }
}

/// Positions of `sets` ordered by descending score; equal scores fall back
/// to the lexicographically smaller set.
pub fn rank_by_score(sets: &[FeatureSet], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| sets[a].cmp(&sets[b])));
    order
}

/// Scores every candidate for one subject and returns them best first.
pub fn rank_candidates(
    encoder: &SetEncoder,
    scorer: &Scorer,
    table: &DescriptorTable,
    z_row: &[f64],
    context: &[f64],
    candidates: &[FeatureSet],
) -> Result<Vec<(FeatureSet, f64)>> {
    ensure!(!candidates.is_empty(), "rank_candidates needs at least one candidate");
    let fast = FastScorerTemplate::new(encoder, scorer, table)?.for_subject(scorer, z_row, context)?;
    let scores: Vec<f64> = candidates.iter().map(|s| fast.score(s)).collect();
    Ok(rank_by_score(candidates, &scores)
        .into_iter()
        .map(|i| (candidates[i].clone(), scores[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::setenc::{tokenize, EncoderConfig, TokenBatch};

    fn table() -> DescriptorTable {
        DescriptorTable::for_rois(&["a", "b", "c"])
    }

    #[test]
    fn constant_volume_context() {
        let c = encode_context(&Volume::filled([8, 9, 10], 5.0));
        assert_eq!(c.0.len(), CONTEXT_LEN);
        for pair in c.0.chunks(2) {
            assert_eq!(pair, &[5.0, 0.0]);
        }
    }

    #[test]
    fn checkerboard_block_std_is_half_gap() {
        let dims = [8, 8, 8];
        let mut v = Vec::new();
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    v.push(if (z + y + x) % 2 == 0 { 10.0 } else { 4.0 });
                }
            }
        }
        let c = encode_context(&Volume::new(dims, v).unwrap());
        for pair in c.0.chunks(2) {
            assert_eq!(pair, &[7.0, 3.0]);
        }
    }

    #[test]
    fn remainder_goes_to_last_block() {
        assert_eq!(block_bounds(10, 4), vec![(0, 2), (2, 4), (4, 6), (6, 10)]);
        assert_eq!(block_bounds(3, 4), vec![(0, 1), (1, 2), (2, 3), (2, 3)]);
    }

    #[test]
    fn zero_scorer_scores_zero() {
        let s = Scorer::zeros(ScorerConfig::default());
        let e = SetEmbedding(vec![1.0; 64]);
        assert_eq!(s.score(&[3.0; CONTEXT_LEN], &e).unwrap(), 0.0);
        assert!(s.score(&[3.0; 5], &e).is_err());
    }

    #[test]
    fn fast_tape_and_direct_scores_agree() {
        let t = table();
        let mut rng = rng_for(3, &[1]);
        let enc = SetEncoder::init(EncoderConfig::for_table(&t, 3), &mut rng);
        let sc = Scorer::init(ScorerConfig::default(), &mut rng);
        let z: Vec<f64> = (0..t.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let ctx: Vec<f64> = (0..CONTEXT_LEN).map(|i| (i as f64 * 0.11).cos()).collect();
        let sets = [
            FeatureSet::new(vec![1, 30, 60]).unwrap(),
            FeatureSet::new(vec![2, 3, 68]).unwrap(),
        ];
        let fast = FastScorerTemplate::new(&enc, &sc, &t)
            .unwrap()
            .for_subject(&sc, &z, &ctx)
            .unwrap();
        let refs: Vec<&FeatureSet> = sets.iter().collect();
        let batch = TokenBatch::new(&z, &refs, &t).unwrap();
        let mut tape = Tape::new();
        let ev = enc.params.bind(&mut tape, true);
        let sv = sc.params.bind(&mut tape, true);
        let emb = enc.encode_on_tape(&mut tape, &ev, &batch).unwrap();
        let cv = tape.constant(DenseTensor::row(ctx.clone()));
        let out = sc.score_on_tape(&mut tape, &sv, cv, emb).unwrap();
        for (r, s) in sets.iter().enumerate() {
            let direct = sc
                .score(&ctx, &enc.encode_set(&tokenize(&z, s, &t).unwrap()).unwrap())
                .unwrap();
            assert!((direct - fast.score(s)).abs() < 1e-10);
            assert!((direct - tape.value(out).data()[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn ranking_ties_are_lexicographic() {
        let sets = vec![
            FeatureSet::new(vec![2]).unwrap(),
            FeatureSet::new(vec![0]).unwrap(),
            FeatureSet::new(vec![1]).unwrap(),
        ];
        assert_eq!(rank_by_score(&sets, &[0.0; 3]), vec![1, 2, 0]);
        assert_eq!(rank_by_score(&sets, &[0.2, 0.9, 0.5]), vec![1, 2, 0]);
    }
}
