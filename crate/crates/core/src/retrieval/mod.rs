//! Two-stage set retrieval and training orchestration.
//!
//! Stage 1 warms up the encoder and scorer by regressing scores onto probe
//! rewards of random sets. Stage 2 samples a large pool per subject, keeps
//! the top `M` by score, classifies with the top-1 set and keeps the scorer
//! honest with probe rewards of `Q` pool members.

mod model;
mod oracle;
mod pool;
mod train;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use model::{evaluate, ModelBundle, MODEL_VERSION};
pub use oracle::{
    audit_oracle_scorer, audit_subpool, enumerate_subsets, exhaustive_oracle, gap_statistics, oracle_reward_context,
    percentile_rank, read_gap_csv, read_reward_list_csv, write_gap_csv, write_reward_list_csv, GapRecord, GapRow,
    GapStats, OracleResult, OracleRewards, RewardRow, ENUMERATION_BUDGET,
};
pub use pool::{build_pool, select_top1, CandidatePool, SelectionResult};
pub use train::{
    joint_train_step, load_train_state, read_history, run_training, save_train_state, stage1_train, stage2_train,
    HistoryRecord, Stage, StepLosses, TrainOptions, TrainState,
};

use crate::error::{ensure, Result};
use crate::probe::ProbeConfig;
use crate::rng::Rng;
use crate::setenc::FeatureSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Features per set.
    pub k: usize,
    /// Preliminary pool size `P0`.
    pub p0: usize,
    /// Retained pool size `M`.
    pub pool_m: usize,
    /// Supervised pool members per subject and Stage 2 step.
    pub q: usize,
    pub stage1_epochs: usize,
    pub stage1_sets: usize,
    pub stage2_epochs: usize,
    pub lambda_scr: f64,
    pub probe: ProbeConfig,
    pub n_support: usize,
    pub n_query: usize,
    /// Subjects per optimizer step.
    pub batch_subjects: usize,
    /// Adam step size for encoder and scorer.
    pub lr: f64,
    /// Adam step size for the classifier head.
    pub classifier_lr: f64,
    /// Number of top pool members whose logits are averaged at inference.
    pub ensemble: usize,
    /// Refit the classifier head on top-1 embeddings after Stage 2.
    pub refit_head: bool,
    /// Restricts candidate sets to these feature indices.
    pub subpool: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 25,
            p0: 5000,
            pool_m: 1000,
            q: 8,
            stage1_epochs: 80,
            stage1_sets: 50,
            stage2_epochs: 10,
            lambda_scr: 1.0,
            probe: ProbeConfig::default(),
            n_support: 24,
            n_query: 24,
            batch_subjects: 8,
            lr: 3e-3,
            classifier_lr: 3e-2,
            ensemble: 3,
            refit_head: true,
            subpool: None,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    /// Candidate feature indices: the subpool if set, else `0..f`.
    pub fn universe(&self, f: usize) -> Vec<usize> {
        match &self.subpool {
            Some(s) => s.clone(),
            None => (0..f).collect(),
        }
    }

    pub fn validate(&self, f: usize) -> Result<()> {
        let universe = self.universe(f);
        ensure!(self.k >= 1, "k must be at least 1");
        ensure!(
            universe.iter().all(|&i| i < f),
            "subpool index out of range for F = {f}"
        );
        let mut u = universe.clone();
        u.sort_unstable();
        u.dedup();
        ensure!(u.len() == universe.len(), "subpool indices must be unique");
        ensure!(
            self.k <= universe.len(),
            "k = {} exceeds the {} candidate features",
            self.k,
            universe.len()
        );
        ensure!(self.pool_m >= 1 && self.pool_m <= self.p0, "need 1 ≤ M ≤ P0");
        ensure!(self.q <= self.pool_m, "need Q ≤ M");
        let total = binomial(universe.len() as u64, self.k as u64);
        ensure!(
            (self.p0 as u128) <= total,
            "P0 = {} exceeds the {total} possible sets",
            self.p0
        );
        ensure!(
            self.stage1_sets as u128 <= total,
            "stage-1 set count exceeds the possible sets"
        );
        ensure!(
            self.lambda_scr.is_finite() && self.lambda_scr >= 0.0,
            "λ_scr must be finite and non-negative"
        );
        ensure!(
            self.lr > 0.0 && self.classifier_lr > 0.0,
            "learning rates must be positive"
        );
        ensure!(self.batch_subjects >= 1, "batch size must be at least 1");
        ensure!((1..=3).contains(&self.ensemble), "ensemble size must be 1–3");
        ensure!(self.probe.steps >= 1, "probe needs at least one step");
        Ok(())
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// `n` distinct uniformly random `k`-subsets of `0..f`.
pub fn sample_sets(f: usize, k: usize, n: usize, rng: &mut Rng) -> Result<Vec<FeatureSet>> {
    let universe: Vec<usize> = (0..f).collect();
    sample_sets_from(&universe, k, n, rng)
}

/// `n` distinct uniformly random `k`-subsets of `universe`, each drawn by a
/// partial Fisher–Yates shuffle and sorted; repeats are redrawn. When `n`
/// is more than half of all subsets, a uniform `n`-sample of the full
/// enumeration is returned instead.
pub fn sample_sets_from(universe: &[usize], k: usize, n: usize, rng: &mut Rng) -> Result<Vec<FeatureSet>> {
    ensure!(k >= 1 && k <= universe.len(), "need 1 ≤ k ≤ {}", universe.len());
    let total = binomial(universe.len() as u64, k as u64);
    ensure!(
        n as u128 <= total,
        "cannot draw {n} distinct sets from C({}, {k}) = {total}",
        universe.len()
    );
    if (n as u128) * 2 > total {
        let mut all = enumerate_subsets(universe, k, total)?;
        let (chosen, _) = all.partial_shuffle(rng, n);
        return Ok(chosen.to_vec());
    }
    let mut scratch = universe.to_vec();
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for i in 0..k {
            let j = rng.gen_range(i..scratch.len());
            scratch.swap(i, j);
        }
        let set = FeatureSet::from_unsorted(scratch[..k].to_vec())?;
        if seen.insert(set.clone()) {
            out.push(set);
        }
    }
    Ok(out)
}
