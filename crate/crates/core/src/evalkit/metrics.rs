use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        ensure!(
            labels.len() == predictions.len(),
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        );
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            ensure!(
                y < classes && p < classes,
                "class index out of range for {classes} classes"
            );
            counts[y][p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes).map(|c| self.counts[c][c]).sum();
        diag as f64 / self.total() as f64
    }

    /// Mean of per-class F1 over all classes; a class with no true and no
    /// predicted members contributes 0.
    pub fn macro_f1(&self) -> f64 {
        let sum: f64 = (0..self.classes)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let denom = (self.row_sum(c) + self.col_sum(c)) as f64;
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .sum();
        sum / self.classes as f64
    }

    /// Mean recall over the classes present among the labels.
    pub fn balanced_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = (0..self.classes)
            .filter(|&c| self.row_sum(c) > 0)
            .map(|c| self.counts[c][c] as f64 / self.row_sum(c) as f64)
            .collect();
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }

    /// Quadratic weighted kappa with weights `(i − j)² / (C − 1)²`. When the
    /// chance-expected weighted disagreement is zero the raters cannot
    /// disagree at all, and the value is 1.
    pub fn qwk(&self) -> f64 {
        let c = self.classes;
        let n = self.total() as f64;
        let denom_w = ((c - 1) * (c - 1)) as f64;
        let mut observed = 0.0;
        let mut expected = 0.0;
        for i in 0..c {
            for j in 0..c {
                let w = ((i as f64) - (j as f64)).powi(2) / denom_w;
                observed += w * self.counts[i][j] as f64;
                expected += w * self.row_sum(i) as f64 * self.col_sum(j) as f64 / n;
            }
        }
        if expected == 0.0 {
            1.0
        } else {
            1.0 - observed / expected
        }
    }
}

/// Mann–Whitney AUC of `scores` for `positive` vs the rest, ties counted
/// half. `None` when either group is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    /// Macro one-vs-rest AUC over the classes where it is defined.
    pub auc_macro_ovr: Option<f64>,
    pub qwk: f64,
    /// Classes left out of the AUC average because the labels contain no
    /// positives or no negatives for them.
    pub auc_excluded_classes: Vec<usize>,
}

/// All metrics for aligned labels, predictions and probability rows.
pub fn metrics(
    labels: &[usize],
    predictions: &[usize],
    probabilities: &[Vec<f64>],
    classes: usize,
) -> Result<(Metrics, ConfusionMatrix)> {
    ensure!(!labels.is_empty(), "metrics need at least one subject");
    ensure!(classes >= 2, "metrics need at least two classes");
    ensure!(
        probabilities.len() == labels.len(),
        "{} probability rows for {} labels",
        probabilities.len(),
        labels.len()
    );
    for row in probabilities {
        ensure!(
            row.len() == classes,
            "probability row has {} entries, expected {classes}",
            row.len()
        );
        let s: f64 = row.iter().sum();
        ensure!((s - 1.0).abs() < 1e-6, "probability row sums to {s}");
    }
    let cm = ConfusionMatrix::from_predictions(labels, predictions, classes)?;
    let mut aucs = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..classes {
        let scores: Vec<f64> = probabilities.iter().map(|r| r[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        match binary_auc(&scores, &positive) {
            Some(a) => aucs.push(a),
            None => excluded.push(c),
        }
    }
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok((
        Metrics {
            accuracy: cm.accuracy(),
            macro_f1: cm.macro_f1(),
            balanced_accuracy: cm.balanced_accuracy(),
            auc_macro_ovr: auc,
            qwk: cm.qwk(),
            auc_excluded_classes: excluded,
        },
        cm,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(p: &[usize], c: usize) -> Vec<Vec<f64>> {
        p.iter()
            .map(|&k| (0..c).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1];
        let (m, _) = metrics(&y, &y, &onehot(&y, 3), 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.auc_macro_ovr, Some(1.0));
        assert_eq!(m.qwk, 1.0);
    }

    #[test]
    fn constant_predictor_balanced_binary() {
        let y = [0, 1, 0, 1];
        let (m, _) = metrics(&y, &[0; 4], &vec![vec![0.5, 0.5]; 4], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.balanced_accuracy, 0.5);
        assert_eq!(m.auc_macro_ovr, Some(0.5));
    }

    #[test]
    fn single_class_auc_excluded() {
        let (m, _) = metrics(&[1, 1], &[1, 0], &[vec![0.2, 0.8], vec![0.6, 0.4]], 2).unwrap();
        assert_eq!(m.auc_macro_ovr, None);
        assert_eq!(m.auc_excluded_classes, vec![0, 1]);
    }

    #[test]
    fn qwk_penalizes_distant_errors_more() {
        let adjacent = ConfusionMatrix {
            classes: 3,
            counts: vec![vec![0, 5, 0], vec![5, 0, 0], vec![0, 0, 5]],
        };
        let extreme = ConfusionMatrix {
            classes: 3,
            counts: vec![vec![0, 0, 5], vec![0, 5, 0], vec![5, 0, 0]],
        };
        assert!(adjacent.qwk() > extreme.qwk());
    }
}
