use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{draw_support_query, Dataset};
use crate::error::{ensure, Error, Result};
use crate::probe::{ProbeConfig, RewardContext};
use crate::rng::{derive_seed, rng_for, stream};
use crate::setenc::FeatureSet;

use super::model::ModelBundle;
use super::pool::{build_pool, select_top1};
use super::{binomial, RetrievalConfig};

/// Largest subset count the exhaustive oracle will enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// All `k`-subsets of `universe` in lexicographic order. `total` must be
/// `C(|universe|, k)`.
pub fn enumerate_subsets(universe: &[usize], k: usize, total: u128) -> Result<Vec<FeatureSet>> {
    if total > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            count: total,
            budget: ENUMERATION_BUDGET,
        });
    }
    let n = universe.len();
    ensure!(k >= 1 && k <= n, "need 1 ≤ k ≤ {n}");
    let mut u = universe.to_vec();
    u.sort_unstable();
    let mut out = Vec::with_capacity(total as usize);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(FeatureSet::new(idx.iter().map(|&i| u[i]).collect())?);
        let Some(p) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
            break;
        };
        idx[p] += 1;
        for q in p + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

/// Reward averaged over several independent support/query draws.
#[derive(Clone, Debug)]
pub struct OracleRewards<'a> {
    pub draws: Vec<RewardContext<'a>>,
}

impl OracleRewards<'_> {
    pub fn reward(&self, set: &FeatureSet) -> Result<f64> {
        let mut acc = 0.0;
        for ctx in &self.draws {
            acc += ctx.reward(set)?;
        }
        Ok(acc / self.draws.len() as f64)
    }
}

/// Subject-seeded support/query draws from the training split (the subject
/// itself excluded).
pub fn oracle_reward_context<'a>(
    ds: &'a Dataset,
    subject: usize,
    draws: usize,
    n_support: usize,
    n_query: usize,
    probe: ProbeConfig,
    seed: u64,
) -> Result<OracleRewards<'a>> {
    ensure!(draws >= 1, "the oracle needs at least one draw");
    let pool: Vec<usize> = ds.train.iter().copied().filter(|&i| i != subject).collect();
    let draws = (0..draws)
        .map(|d| {
            let s = derive_seed(seed, &[stream::ORACLE_DRAWS, subject as u64, d as u64]);
            let (sup, qry) = draw_support_query(&pool, &ds.labels, n_support, n_query, s)?;
            RewardContext::new(&ds.z, &ds.labels, ds.classes, sup, qry, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleRewards { draws })
}

/// Every subset's reward and the exact maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub subject_id: String,
    /// Lexicographic enumeration of the subpool's `k`-subsets.
    pub sets: Vec<FeatureSet>,
    /// Reward of `sets[i]`.
    pub rewards: Vec<f64>,
    pub r_max: f64,
    pub best_set: FeatureSet,
}

impl OracleResult {
    pub fn reward_of(&self, set: &FeatureSet) -> Option<f64> {
        self.sets.binary_search(set).ok().map(|i| self.rewards[i])
    }
}

/// Enumerates every `k`-subset of `universe` and scores it with `rewards`.
/// Refuses when the subset count exceeds [`ENUMERATION_BUDGET`].
pub fn exhaustive_oracle(
    subject_id: &str,
    universe: &[usize],
    k: usize,
    rewards: &OracleRewards,
) -> Result<OracleResult> {
    let total = binomial(universe.len() as u64, k as u64);
    let sets = enumerate_subsets(universe, k, total)?;
    let values = sets
        .par_iter()
        .map(|s| rewards.reward(s))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &r) in values.iter().enumerate() {
        if r > values[best] {
            best = i;
        }
    }
    Ok(OracleResult {
        subject_id: subject_id.to_string(),
        best_set: sets[best].clone(),
        r_max: values[best],
        sets,
        rewards: values,
    })
}

/// Fraction of `rewards` that are ≤ `r`.
pub fn percentile_rank(rewards: &[f64], r: f64) -> f64 {
    rewards.iter().filter(|&&x| x <= r).count() as f64 / rewards.len().max(1) as f64
}

/// One subject's audit row: the retrieved set against the exhaustive max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub subject_id: String,
    pub s_star: FeatureSet,
    pub r_star: f64,
    pub r_max: f64,
    pub gap: f64,
    /// Fraction of enumerated rewards ≤ `r_star`.
    pub percentile: f64,
    /// Every enumerated reward, lexicographic set order.
    pub rewards: Vec<f64>,
}

/// Runs retrieval with `bundle` (whose subpool must be set) and audits each
/// subject's pick against the exhaustive oracle over that subpool.
pub fn audit_subpool(bundle: &ModelBundle, ds: &Dataset, subjects: &[usize], draws: usize) -> Result<Vec<GapRecord>> {
    let cfg = &bundle.config;
    let universe = cfg
        .subpool
        .clone()
        .ok_or_else(|| Error::Contract("the gap audit needs a model trained on a subpool".into()))?;
    let picks = bundle.select(ds, subjects)?;
    subjects
        .iter()
        .zip(picks)
        .map(|(&i, (_, sel))| {
            let rewards = oracle_reward_context(ds, i, draws, cfg.n_support, cfg.n_query, cfg.probe, cfg.seed)?;
            let oracle = exhaustive_oracle(&ds.subject_ids[i], &universe, cfg.k, &rewards)?;
            gap_record(oracle, sel.s_star)
        })
        .collect()
}

fn gap_record(oracle: OracleResult, s_star: FeatureSet) -> Result<GapRecord> {
    let r_star = oracle
        .reward_of(&s_star)
        .ok_or_else(|| Error::Contract("retrieved set lies outside the subpool".into()))?;
    Ok(GapRecord {
        percentile: percentile_rank(&oracle.rewards, r_star),
        gap: oracle.r_max - r_star,
        subject_id: oracle.subject_id,
        s_star,
        r_star,
        r_max: oracle.r_max,
        rewards: oracle.rewards,
    })
}

/// Two-stage retrieval with the scorer replaced by the oracle reward itself,
/// audited against exhaustive enumeration. `config.p0` and `config.pool_m`
/// are capped at the subset count; with `p0` covering every subset the gap
/// is zero by construction.
pub fn audit_oracle_scorer(
    ds: &Dataset,
    subjects: &[usize],
    universe: &[usize],
    config: &RetrievalConfig,
    draws: usize,
) -> Result<Vec<GapRecord>> {
    let total = binomial(universe.len() as u64, config.k as u64);
    let p0 = (config.p0 as u128).min(total) as usize;
    let m = config.pool_m.min(p0);
    subjects
        .iter()
        .map(|&i| {
            ensure!(i < ds.len(), "subject {i} out of range");
            let rewards = oracle_reward_context(
                ds,
                i,
                draws,
                config.n_support,
                config.n_query,
                config.probe,
                config.seed,
            )?;
            let oracle = exhaustive_oracle(&ds.subject_ids[i], universe, config.k, &rewards)?;
            let mut rng = rng_for(config.seed, &[stream::INFERENCE_POOL, i as u64]);
            let pool = build_pool(&ds.subject_ids[i], universe, config.k, p0, m, 0, &mut rng, |s| {
                oracle
                    .reward_of(s)
                    .ok_or_else(|| Error::Contract("sampled set lies outside the subpool".into()))
            })?;
            gap_record(oracle, select_top1(&pool)?.s_star)
        })
        .collect()
}

/// One row of the gap report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub subject_id: String,
    #[serde(rename = "R_star")]
    pub r_star: f64,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    pub gap: f64,
}

/// `subject_id,R_star,R_max,gap`.
pub fn write_gap_csv<W: Write>(w: W, records: &[GapRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(GapRow {
            subject_id: r.subject_id.clone(),
            r_star: r.r_star,
            r_max: r.r_max,
            gap: r.gap,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_gap_csv<R: Read>(r: R) -> Result<Vec<GapRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// One enumerated subset's reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub subject_id: String,
    /// Position in the lexicographic enumeration.
    pub rank: usize,
    /// Feature indices joined by `;`.
    pub set: String,
    pub reward: f64,
}

/// `subject_id,rank,set,reward`, one row per enumerated subset of
/// `universe` per subject.
pub fn write_reward_list_csv<W: Write>(w: W, records: &[GapRecord], universe: &[usize], k: usize) -> Result<()> {
    let total = binomial(universe.len() as u64, k as u64);
    let sets = enumerate_subsets(universe, k, total)?;
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        ensure!(
            r.rewards.len() == sets.len(),
            "reward list does not match the enumeration"
        );
        for (rank, (set, &reward)) in sets.iter().zip(&r.rewards).enumerate() {
            let set = set.indices().iter().map(usize::to_string).collect::<Vec<_>>().join(";");
            out.serialize(RewardRow {
                subject_id: r.subject_id.clone(),
                rank,
                set,
                reward,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_reward_list_csv<R: Read>(r: R) -> Result<Vec<RewardRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    /// `∫ P(Δ > ε) dε` of the empirical distribution, by step integration.
    pub tail_integral: f64,
    /// `(ε, P(Δ > ε))` at each distinct gap value, ascending.
    pub tail_curve: Vec<(f64, f64)>,
    /// `(level, value)` with linear interpolation between order statistics.
    pub percentiles: Vec<(f64, f64)>,
    pub median: f64,
    pub p95: f64,
}

fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn gap_statistics(gaps: &[f64]) -> Result<GapStats> {
    ensure!(!gaps.is_empty(), "gap statistics need at least one gap");
    ensure!(
        gaps.iter().all(|g| g.is_finite() && *g >= 0.0),
        "gaps must be finite and non-negative"
    );
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let mut tail_integral = 0.0;
    let mut tail_curve = Vec::new();
    let mut prev = 0.0;
    for (j, &g) in sorted.iter().enumerate() {
        tail_integral += (g - prev) * (n - j) as f64 / n as f64;
        prev = g;
        if j + 1 == n || sorted[j + 1] > g {
            tail_curve.push((g, (n - j - 1) as f64 / n as f64));
        }
    }
    let percentiles: Vec<(f64, f64)> = [0.5, 0.9, 0.95, 0.99]
        .iter()
        .map(|&l| (l, quantile(&sorted, l)))
        .collect();
    Ok(GapStats {
        count: n,
        mean,
        tail_integral,
        tail_curve,
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
        percentiles,
    })
}
