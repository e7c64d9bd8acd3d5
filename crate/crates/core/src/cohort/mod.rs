//! Synthetic cohorts: generation, persistence, splitting, support/query
//! draws and feature normalization.

mod generate;
pub mod io;
mod normalize;
mod split;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generate::{
    generate_cohort, generate_subject, roi_names, subject_id, CohortConfig, Plant, PlantEffect, PlantSpec,
    SubjectRecord, BACKGROUND_LEVEL, BACKGROUND_SD, GRAIN_SD, STRUCTURE_ROI,
};
pub use io::{load_cohort, save_cohort, Cohort, CohortManifest, SplitInfo, SubjectEntry};
pub use normalize::{normalize_features, plant_clones, FeatureMatrix, FeatureStats, MIN_STD, Z_CLAMP};
pub use split::{draw_support_query, indices_of, split, Split};

use crate::error::{ensure, Error, Result};
use crate::radiomics::{extract_subject, DescriptorTable, ExtractConfig, FeatureFamily, FeatureVector};
use crate::rng::{derive_seed, rng_for, stream};
use crate::scorer::{encode_context, ContextVector};

/// Generates a cohort and wraps it with its manifest.
pub fn build_cohort(config: &CohortConfig) -> Result<Cohort> {
    let records = generate_cohort(config)?;
    Cohort::from_records(records, config.classes, config.seed, config.plants.clone())
}

/// Extracts features for every subject (in parallel) and records the
/// descriptor table in the manifest.
pub fn extract_features(cohort: &mut Cohort, config: &ExtractConfig) -> Result<()> {
    ensure!(!cohort.records.is_empty(), "cohort has no subjects");
    let results: Vec<(FeatureVector, DescriptorTable)> = cohort
        .records
        .par_iter()
        .map(|r| extract_subject(&r.volume, &r.masks, config))
        .collect::<Result<_>>()?;
    let table = results[0].1.clone();
    ensure!(
        results.iter().all(|(_, t)| *t == table),
        "subjects disagree on the feature descriptor table"
    );
    cohort.manifest.feature_count = Some(table.len());
    cohort.manifest.descriptors = Some(table);
    cohort.features = Some(results.into_iter().map(|(f, _)| f).collect());
    Ok(())
}

/// Redundancy layout: `targets` are overwritten with noisy copies of
/// `source` after extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloneSpec {
    pub source: usize,
    pub targets: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

/// ROI carrying the weak complementary signal of the clone benchmark.
pub const CLONE_WEAK_ROI: &str = "grid_100";

impl CohortConfig {
    /// Desk cohort for the redundancy benchmark: class 1 strongly brightens
    /// the structure, class 2 weakly roughens [`CLONE_WEAK_ROI`].
    pub fn clone_benchmark(seed: u64) -> Self {
        let mut plants = PlantSpec::none(3);
        plants.per_class[1].push(Plant {
            roi: STRUCTURE_ROI.into(),
            effect: PlantEffect::IntensityShift,
            magnitude: 1.5,
        });
        plants.per_class[2].push(Plant {
            roi: CLONE_WEAK_ROI.into(),
            effect: PlantEffect::NoiseBoost,
            magnitude: 1.0,
        });
        Self {
            plants,
            ..Self::desk(seed)
        }
    }
}

impl CloneSpec {
    /// Ten copies of the structure's first-order mean, placed on randomly
    /// chosen features of the signal-free `grid_0**` cells.
    pub fn for_table(table: &DescriptorTable, seed: u64) -> Result<Self> {
        let source = table
            .index_of(STRUCTURE_ROI, FeatureFamily::FirstOrder, "Mean")
            .ok_or_else(|| Error::Contract("descriptor table lacks the structure mean".into()))?;
        let mut free: Vec<usize> = table
            .descriptors()
            .iter()
            .filter(|d| d.roi.starts_with("grid_0"))
            .map(|d| d.index)
            .collect();
        ensure!(free.len() >= 10, "too few signal-free features for ten clones");
        free.shuffle(&mut rng_for(seed, &[stream::CLONES]));
        let mut targets = free[..10].to_vec();
        targets.sort_unstable();
        Ok(Self {
            source,
            targets,
            noise: 0.1,
            seed: derive_seed(seed, &[stream::CLONES, 1]),
        })
    }
}

/// Applies a clone layout to extracted features.
pub fn apply_clones(cohort: &mut Cohort, spec: &CloneSpec) -> Result<()> {
    let features = cohort
        .features
        .as_mut()
        .ok_or_else(|| Error::Contract("features have not been extracted".into()))?;
    plant_clones(features, spec.source, &spec.targets, spec.noise, spec.seed)
}

/// Assigns a stratified train/validation split and records it in the manifest.
pub fn assign_split(cohort: &mut Cohort, fractions: (f64, f64), seed: u64) -> Result<()> {
    let labels = cohort.manifest.labels();
    let splits = split(&labels, fractions, seed)?;
    for (entry, s) in cohort.manifest.subjects.iter_mut().zip(splits) {
        entry.split = Some(s);
    }
    cohort.manifest.split = Some(SplitInfo { fractions, seed });
    cohort.manifest.normalization = None;
    Ok(())
}

/// Everything downstream modules need: labels, z-scored features, split
/// indices and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub table: DescriptorTable,
    pub z: FeatureMatrix,
    pub stats: FeatureStats,
    /// Z-scored volume context summaries, one row per subject.
    pub contexts: FeatureMatrix,
    pub context_stats: FeatureStats,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from raw feature vectors and context summaries;
    /// all statistics come from the training split only.
    pub fn from_features(
        subject_ids: Vec<String>,
        labels: Vec<usize>,
        classes: usize,
        table: DescriptorTable,
        features: &[FeatureVector],
        contexts: &[ContextVector],
        splits: &[Split],
    ) -> Result<Self> {
        let n = labels.len();
        ensure!(
            subject_ids.len() == n && features.len() == n && splits.len() == n && contexts.len() == n,
            "dataset parts disagree on the subject count"
        );
        ensure!(classes >= 2, "a dataset needs at least two classes");
        ensure!(
            labels.iter().all(|&y| y < classes),
            "label out of range for {classes} classes"
        );
        ensure!(
            features.iter().all(|f| f.len() == table.len()),
            "features do not conform to the descriptor table"
        );
        let train = indices_of(splits, Split::Train);
        let validation = indices_of(splits, Split::Validation);
        let (z, stats) = normalize_features(Some(features), &train)?;
        let raw: Vec<FeatureVector> = contexts.iter().map(|c| FeatureVector(c.0.clone())).collect();
        let (contexts, context_stats) = normalize_features(Some(&raw), &train)?;
        Ok(Self {
            subject_ids,
            labels,
            classes,
            table,
            z,
            stats,
            contexts,
            context_stats,
            train,
            validation,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.z.cols()
    }
}

/// Normalizes a split, extracted cohort, storing the statistics in its
/// manifest.
pub fn prepare_dataset(cohort: &mut Cohort) -> Result<Dataset> {
    let splits = cohort
        .manifest
        .splits()
        .ok_or_else(|| Error::Contract("cohort has no train/validation split".into()))?;
    let table = cohort
        .manifest
        .descriptors
        .clone()
        .ok_or_else(|| Error::Contract("features have not been extracted".into()))?;
    let features = cohort
        .features
        .as_deref()
        .ok_or_else(|| Error::Contract("features have not been extracted".into()))?;
    let contexts: Vec<ContextVector> = cohort.records.par_iter().map(|r| encode_context(&r.volume)).collect();
    let ds = Dataset::from_features(
        cohort.manifest.subjects.iter().map(|s| s.subject_id.clone()).collect(),
        cohort.manifest.labels(),
        cohort.manifest.classes,
        table,
        features,
        &contexts,
        &splits,
    )?;
    cohort.manifest.normalization = Some(ds.stats.clone());
    Ok(ds)
}
