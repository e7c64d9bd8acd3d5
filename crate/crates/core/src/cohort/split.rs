use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Subjects grouped by label, in index order.
fn by_class(labels: &[usize], indices: impl IntoIterator<Item = usize>) -> Vec<Vec<usize>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); classes];
    for i in indices {
        groups[labels[i]].push(i);
    }
    groups
}

/// Stratified train/validation assignment. Each class contributes
/// `round(train_fraction · n_c)` subjects to training.
pub fn split(labels: &[usize], fractions: (f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (train, val) = fractions;
    ensure!(
        train.is_finite() && val.is_finite() && train >= 0.0 && val >= 0.0,
        "split fractions must be non-negative, got {fractions:?}"
    );
    ensure!(
        (train + val - 1.0).abs() < 1e-9,
        "split fractions must sum to 1, got {fractions:?}"
    );
    let groups = by_class(labels, 0..labels.len());
    for (c, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {c} has {} member(s); at least 2 are needed",
                g.len()
            )));
        }
    }
    let mut out = vec![Split::Validation; labels.len()];
    for (c, mut members) in groups.into_iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::SPLIT, c as u64]);
        members.shuffle(&mut rng);
        let n_train = (train * members.len() as f64).round() as usize;
        for &i in &members[..n_train.min(members.len())] {
            out[i] = Split::Train;
        }
    }
    Ok(out)
}

pub fn indices_of(splits: &[Split], which: Split) -> Vec<usize> {
    splits
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == which)
        .map(|(i, _)| i)
        .collect()
}

/// Largest-remainder apportionment of `total` over groups, each share in
/// `[1, cap_c]`.
fn apportion(total: usize, sizes: &[usize], caps: &[usize]) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    let ideal: Vec<f64> = sizes.iter().map(|&m| total as f64 * m as f64 / n as f64).collect();
    let mut share: Vec<usize> = ideal
        .iter()
        .zip(caps)
        .map(|(&x, &cap)| (x.floor() as usize).clamp(1, cap.max(1)))
        .collect();
    loop {
        let sum: usize = share.iter().sum();
        if sum == total {
            return Ok(share);
        }
        let pick = if sum > total {
            (0..share.len())
                .filter(|&c| share[c] > 1)
                .max_by(|&a, &b| {
                    (share[a] as f64 - ideal[a])
                        .total_cmp(&(share[b] as f64 - ideal[b]))
                        .then(b.cmp(&a))
                })
                .map(|c| (c, false))
        } else {
            (0..share.len())
                .filter(|&c| share[c] < caps[c])
                .max_by(|&a, &b| {
                    (ideal[a] - share[a] as f64)
                        .total_cmp(&(ideal[b] - share[b] as f64))
                        .then(b.cmp(&a))
                })
                .map(|c| (c, true))
        };
        match pick {
            Some((c, true)) => share[c] += 1,
            Some((c, false)) => share[c] -= 1,
            None => {
                return Err(Error::Contract(format!(
                    "cannot apportion {total} draws over class sizes {sizes:?}"
                )))
            }
        }
    }
}

/// Disjoint, class-stratified support and query draws from `train`.
/// Every class present in `train` gets at least one subject in each draw.
pub fn draw_support_query(
    train: &[usize],
    labels: &[usize],
    n_sup: usize,
    n_qry: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure!(
        n_sup + n_qry <= train.len(),
        "support {n_sup} + query {n_qry} exceeds {} training subjects",
        train.len()
    );
    for &i in train {
        ensure!(i < labels.len(), "subject index {i} out of range");
    }
    let groups: Vec<Vec<usize>> = by_class(labels, train.iter().copied())
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect();
    ensure!(
        groups.iter().all(|g| g.len() >= 2),
        "every class needs at least two training subjects for a support/query draw"
    );
    ensure!(
        n_sup >= groups.len() && n_qry >= groups.len(),
        "support {n_sup} and query {n_qry} must each cover {} classes",
        groups.len()
    );
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let sup_caps: Vec<usize> = sizes.iter().map(|m| m - 1).collect();
    let sup = apportion(n_sup, &sizes, &sup_caps)?;
    let qry_caps: Vec<usize> = sizes.iter().zip(&sup).map(|(m, s)| m - s).collect();
    let qry = apportion(n_qry, &sizes, &qry_caps)?;

    let mut support = Vec::with_capacity(n_sup);
    let mut query = Vec::with_capacity(n_qry);
    for (c, mut members) in groups.into_iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::SUPPORT_QUERY, c as u64]);
        members.shuffle(&mut rng);
        support.extend_from_slice(&members[..sup[c]]);
        query.extend_from_slice(&members[sup[c]..sup[c] + qry[c]]);
    }
    support.sort_unstable();
    query.sort_unstable();
    Ok((support, query))
}
