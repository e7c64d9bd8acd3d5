//! Experiment config file: TOML sections, every key optional. Command-line
//! flags override file values.

use std::path::Path;

use anyhow::{Context, Result};
use radset::radiomics::Dims;
use radset::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Seeds every stage unless a section sets its own.
    pub seed: Option<u64>,
    pub gen: GenSection,
    pub extract: ExtractSection,
    pub retrieval: RetrievalConfig,
    pub oracle: OracleSection,
    pub plots: PlotsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub subjects: usize,
    pub dims: Dims,
    pub classes: usize,
    /// Multiplier on the default plant magnitudes; 0 gives a no-signal cohort.
    pub signal_scale: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            subjects: 120,
            dims: [16, 32, 32],
            classes: 3,
            signal_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub bin_count: usize,
    pub train_fraction: f64,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            bin_count: radset::radiomics::ExtractConfig::default().bin_count,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Size of the enumerated feature subpool.
    pub subpool: usize,
    pub k: usize,
    /// Support/query draws averaged per reward.
    pub draws: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            subpool: 10,
            k: 3,
            draws: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotsSection {
    pub bins: usize,
}

impl Default for PlotsSection {
    fn default() -> Self {
        Self { bins: 30 }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(seed) = config.seed {
            if !text_sets(&text, "retrieval", "seed") {
                config.retrieval.seed = seed;
            }
        }
        Ok(config)
    }
}

fn text_sets(text: &str, section: &str, key: &str) -> bool {
    toml::from_str::<toml::Table>(text)
        .ok()
        .and_then(|t| t.get(section).and_then(|s| s.get(key)).cloned())
        .is_some()
}
