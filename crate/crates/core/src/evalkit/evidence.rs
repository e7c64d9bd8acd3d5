use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::radiomics::{DescriptorTable, FeatureFamily};
use crate::setenc::FeatureSet;

use super::Prediction;

/// `|z|` above which a feature counts as high or low.
pub const DIRECTION_THRESHOLD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
    Neutral,
}

impl Direction {
    pub fn of(z: f64) -> Self {
        if z > DIRECTION_THRESHOLD {
            Self::High
        } else if z < -DIRECTION_THRESHOLD {
            Self::Low
        } else {
            Self::Neutral
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    /// 1-based, by descending `|z|`.
    pub rank: usize,
    pub feature_index: usize,
    pub roi: String,
    pub family: FeatureFamily,
    pub feature_name: String,
    pub raw_value: f64,
    pub z_score: f64,
    pub direction: Direction,
}

/// The retrieved evidence behind one subject's prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub subject_id: String,
    pub prediction: usize,
    pub probabilities: Vec<f64>,
    pub entries: Vec<EvidenceEntry>,
    /// Selected-feature count per ROI, every ROI listed.
    pub roi_counts: BTreeMap<String, usize>,
}

impl EvidenceReport {
    /// Entries sorted by `|z|` (ties by feature index) and per-ROI counts.
    pub fn new(
        subject_id: &str,
        prediction: &Prediction,
        set: &FeatureSet,
        raw: &[f64],
        z: &[f64],
        table: &DescriptorTable,
    ) -> Result<Self> {
        ensure!(
            raw.len() == table.len() && z.len() == table.len(),
            "feature vectors do not conform to the descriptor table"
        );
        let mut order: Vec<usize> = set.indices().to_vec();
        order.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
        let mut roi_counts: BTreeMap<String, usize> = table.roi_names().iter().map(|r| (r.clone(), 0)).collect();
        let mut entries = Vec::with_capacity(order.len());
        for (rank, &f) in order.iter().enumerate() {
            let d = table
                .get(f)
                .ok_or_else(|| Error::Contract(format!("feature {f} missing from the descriptor table")))?;
            *roi_counts.entry(d.roi.clone()).or_insert(0) += 1;
            entries.push(EvidenceEntry {
                rank: rank + 1,
                feature_index: f,
                roi: d.roi.clone(),
                family: d.family,
                feature_name: d.name.clone(),
                raw_value: raw[f],
                z_score: z[f],
                direction: Direction::of(z[f]),
            });
        }
        Ok(Self {
            subject_id: subject_id.to_string(),
            prediction: prediction.class,
            probabilities: prediction.probabilities.clone(),
            entries,
            roi_counts,
        })
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let mut out = format!(
            "subject {}  predicted class {}  p = {:?}\n{:>4}  {:<10} {:<10} {:<28} {:>12} {:>8}  dir\n",
            self.subject_id,
            self.prediction,
            self.probabilities
                .iter()
                .map(|p| (p * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            "rank",
            "roi",
            "family",
            "feature",
            "raw",
            "z"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:>4}  {:<10} {:<10} {:<28} {:>12.4} {:>8.3}  {:?}\n",
                e.rank,
                e.roi,
                e.family.as_str(),
                e.feature_name,
                e.raw_value,
                e.z_score,
                e.direction
            ));
        }
        for (roi, n) in &self.roi_counts {
            out.push_str(&format!("{roi:<10} {}\n", "#".repeat(*n)));
        }
        out
    }
}
