use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::scorer::rank_by_score;
use crate::setenc::FeatureSet;

use super::sample_sets_from;

/// The top-`M` sets of one subject's preliminary pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub subject_id: String,
    /// Best first.
    pub sets: Vec<FeatureSet>,
    pub scores: Vec<f64>,
    /// Positions in `sets` chosen for reward supervision.
    pub supervised: Vec<usize>,
    /// Rewards of supervised members, once computed.
    pub rewards: BTreeMap<usize, f64>,
    /// Scores of every sampled set, in sampling order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub all_scores: Vec<f64>,
}

/// Samples `p0` distinct sets from `universe`, scores each with `score`,
/// keeps the best `m` (ties broken lexicographically) and picks `q` of them
/// uniformly for supervision.
#[allow(clippy::too_many_arguments)]
pub fn build_pool<F>(
    subject_id: &str,
    universe: &[usize],
    k: usize,
    p0: usize,
    m: usize,
    q: usize,
    rng: &mut Rng,
    mut score: F,
) -> Result<CandidatePool>
where
    F: FnMut(&FeatureSet) -> Result<f64>,
{
    ensure!(m >= 1 && m <= p0, "need 1 ≤ M ≤ P0, got M = {m}, P0 = {p0}");
    ensure!(q <= m, "need Q ≤ M, got Q = {q}, M = {m}");
    let sets = sample_sets_from(universe, k, p0, rng)?;
    let scores = sets.iter().map(&mut score).collect::<Result<Vec<f64>>>()?;
    let order = rank_by_score(&sets, &scores);
    let kept: Vec<usize> = order[..m].to_vec();
    let mut supervised = index::sample(rng, m, q).into_vec();
    supervised.sort_unstable();
    Ok(CandidatePool {
        subject_id: subject_id.to_string(),
        sets: kept.iter().map(|&i| sets[i].clone()).collect(),
        scores: kept.iter().map(|&i| scores[i]).collect(),
        supervised,
        rewards: BTreeMap::new(),
        all_scores: scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub subject_id: String,
    pub s_star: FeatureSet,
    pub score: f64,
    /// The first (up to) three pool members, `s_star` first.
    pub ensemble_sets: Vec<FeatureSet>,
}

/// The pool's best member and the ensemble built from its first three.
pub fn select_top1(pool: &CandidatePool) -> Result<SelectionResult> {
    ensure!(!pool.sets.is_empty(), "cannot select from an empty pool");
    let order = rank_by_score(&pool.sets, &pool.scores);
    let top = order[0];
    Ok(SelectionResult {
        subject_id: pool.subject_id.clone(),
        s_star: pool.sets[top].clone(),
        score: pool.scores[top],
        ensemble_sets: order.iter().take(3).map(|&i| pool.sets[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn pool_of(sets: Vec<Vec<usize>>, scores: Vec<f64>) -> CandidatePool {
        CandidatePool {
            subject_id: "s".into(),
            sets: sets.into_iter().map(|s| FeatureSet::new(s).unwrap()).collect(),
            scores,
            supervised: vec![],
            rewards: BTreeMap::new(),
            all_scores: vec![],
        }
    }

    #[test]
    fn ties_pick_lexicographically_smaller() {
        let r = select_top1(&pool_of(vec![vec![1, 2], vec![0, 5]], vec![0.5, 0.5])).unwrap();
        assert_eq!(r.s_star.indices(), &[0, 5]);
        assert_eq!(r.ensemble_sets.len(), 2);
    }

    #[test]
    fn pool_contract() {
        let universe: Vec<usize> = (0..12).collect();
        let p = build_pool("s", &universe, 3, 100, 40, 8, &mut rng_for(4, &[]), |s| {
            Ok(s.indices().iter().sum::<usize>() as f64)
        })
        .unwrap();
        assert_eq!(p.sets.len(), 40);
        assert!(p.scores.windows(2).all(|w| w[0] >= w[1]));
        let mut u = p.sets.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 40);
        assert_eq!(p.supervised.len(), 8);
        assert_eq!(p.all_scores.len(), 100);
    }

    #[test]
    fn full_pool_is_sorted_sample() {
        let universe: Vec<usize> = (0..6).collect();
        let p = build_pool("s", &universe, 2, 15, 15, 0, &mut rng_for(5, &[]), |s| {
            Ok(-(s.indices()[0] as f64))
        })
        .unwrap();
        assert_eq!(p.sets.len(), 15);
        assert_eq!(p.sets[0].indices(), &[0, 1]);
    }
}
