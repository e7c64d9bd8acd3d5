//! Radiomic feature extraction.
//!
//! Each ROI contributes a fixed roster of 23 features: 10 first-order
//! statistics, 6 GLCM, 4 GLRLM and 3 GLDM features. Texture features are
//! computed on a 32-level min-max discretization of the ROI. The pooled
//! vector of a subject concatenates ROI blocks in ROI declaration order, and
//! within a block follows [`ROSTER`].

mod discretize;
mod first_order;
mod grid;
mod texture;
mod volume;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use discretize::{discretize, LabelMap};
pub use first_order::{first_order, first_order_of_values, FirstOrderFeatures, ENTROPY_BINS, FIRST_ORDER_NAMES};
pub use grid::{grid_crop, grid_rois};
pub use texture::{
    cooccurrence_matrix, dependence_matrix, glcm_features, gldm_features, glrlm_features, run_length_matrix,
    GlcmFeatures, GldmFeatures, GlrlmFeatures, RunMatrix, DIRECTIONS, GLCM_NAMES, GLDM_NAMES, GLRLM_NAMES,
};
pub use volume::{Dims, Mask, RoiMaskSet, Volume};

/// Features per ROI.
pub const FEATURES_PER_ROI: usize = 23;

/// Gray levels used for texture matrices.
pub const DEFAULT_BIN_COUNT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureFamily {
    FirstOrder,
    #[serde(rename = "GLCM")]
    Glcm,
    #[serde(rename = "GLRLM")]
    Glrlm,
    #[serde(rename = "GLDM")]
    Gldm,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 4] = [Self::FirstOrder, Self::Glcm, Self::Glrlm, Self::Gldm];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FirstOrder => "FirstOrder",
            Self::Glcm => "GLCM",
            Self::Glrlm => "GLRLM",
            Self::Gldm => "GLDM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Fixed per-ROI feature order: (family, name).
pub const ROSTER: [(FeatureFamily, &str); FEATURES_PER_ROI] = {
    use FeatureFamily::*;
    [
        (FirstOrder, FIRST_ORDER_NAMES[0]),
        (FirstOrder, FIRST_ORDER_NAMES[1]),
        (FirstOrder, FIRST_ORDER_NAMES[2]),
        (FirstOrder, FIRST_ORDER_NAMES[3]),
        (FirstOrder, FIRST_ORDER_NAMES[4]),
        (FirstOrder, FIRST_ORDER_NAMES[5]),
        (FirstOrder, FIRST_ORDER_NAMES[6]),
        (FirstOrder, FIRST_ORDER_NAMES[7]),
        (FirstOrder, FIRST_ORDER_NAMES[8]),
        (FirstOrder, FIRST_ORDER_NAMES[9]),
        (Glcm, GLCM_NAMES[0]),
        (Glcm, GLCM_NAMES[1]),
        (Glcm, GLCM_NAMES[2]),
        (Glcm, GLCM_NAMES[3]),
        (Glcm, GLCM_NAMES[4]),
        (Glcm, GLCM_NAMES[5]),
        (Glrlm, GLRLM_NAMES[0]),
        (Glrlm, GLRLM_NAMES[1]),
        (Glrlm, GLRLM_NAMES[2]),
        (Glrlm, GLRLM_NAMES[3]),
        (Gldm, GLDM_NAMES[0]),
        (Gldm, GLDM_NAMES[1]),
        (Gldm, GLDM_NAMES[2]),
    ]
};

/// Position of (family, name) within [`ROSTER`].
pub fn roster_position(family: FeatureFamily, name: &str) -> Option<usize> {
    ROSTER.iter().position(|&(f, n)| f == family && n == name)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub index: usize,
    pub roi: String,
    pub family: FeatureFamily,
    pub name: String,
}

/// Metadata for every index of the pooled feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorTable {
    descriptors: Vec<FeatureDescriptor>,
    roi_names: Vec<String>,
}

impl DescriptorTable {
    /// The roster table for the given ROI order.
    pub fn for_rois<S: AsRef<str>>(rois: &[S]) -> Self {
        let mut descriptors = Vec::with_capacity(rois.len() * FEATURES_PER_ROI);
        for roi in rois {
            for (family, name) in ROSTER {
                descriptors.push(FeatureDescriptor {
                    index: descriptors.len(),
                    roi: roi.as_ref().to_string(),
                    family,
                    name: name.to_string(),
                });
            }
        }
        Self {
            descriptors,
            roi_names: rois.iter().map(|r| r.as_ref().to_string()).collect(),
        }
    }

    /// Validates an arbitrary descriptor list (e.g. read back from JSON).
    pub fn from_descriptors(descriptors: Vec<FeatureDescriptor>) -> Result<Self> {
        let mut roi_names: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, d) in descriptors.iter().enumerate() {
            ensure!(
                d.index == i,
                "descriptor indices must be contiguous, found {} at {i}",
                d.index
            );
            ensure!(
                roster_position(d.family, &d.name).is_some(),
                "unknown feature {:?}/{}",
                d.family,
                d.name
            );
            ensure!(
                seen.insert((d.roi.clone(), d.family, d.name.clone())),
                "duplicate descriptor ({}, {:?}, {})",
                d.roi,
                d.family,
                d.name
            );
            if !roi_names.contains(&d.roi) {
                roi_names.push(d.roi.clone());
            }
        }
        Ok(Self { descriptors, roi_names })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&FeatureDescriptor> {
        self.descriptors.get(index)
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn roi_names(&self) -> &[String] {
        &self.roi_names
    }

    pub fn roi_count(&self) -> usize {
        self.roi_names.len()
    }

    /// (roi id, family id, roster feature id) for a feature index.
    pub fn ids(&self, index: usize) -> Option<(usize, usize, usize)> {
        let d = self.descriptors.get(index)?;
        let roi = self.roi_names.iter().position(|r| *r == d.roi)?;
        let feature = roster_position(d.family, &d.name)?;
        Some((roi, d.family.id(), feature))
    }

    /// Indices belonging to one ROI and family.
    pub fn indices_of(&self, roi: &str, family: FeatureFamily) -> Vec<usize> {
        self.descriptors
            .iter()
            .filter(|d| d.roi == roi && d.family == family)
            .map(|d| d.index)
            .collect()
    }

    pub fn index_of(&self, roi: &str, family: FeatureFamily, name: &str) -> Option<usize> {
        self.descriptors
            .iter()
            .find(|d| d.roi == roi && d.family == family && d.name == name)
            .map(|d| d.index)
    }
}

/// A subject's pooled radiomics vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub bin_count: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
        }
    }
}

/// The 23 roster values for one ROI.
pub fn extract_roi(volume: &Volume, mask: &Mask, config: &ExtractConfig) -> Result<[f64; FEATURES_PER_ROI]> {
    let fo = first_order(volume, mask)?;
    let labels = discretize(volume, mask, config.bin_count)?;
    let glcm = glcm_features(&labels);
    let glrlm = glrlm_features(&labels);
    let gldm = gldm_features(&labels);
    let mut out = [0.0; FEATURES_PER_ROI];
    let parts: [&[f64]; 4] = [&fo.to_array(), &glcm.to_array(), &glrlm.to_array(), &gldm.to_array()];
    for (o, v) in out.iter_mut().zip(parts.into_iter().flatten()) {
        *o = *v;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite radiomic feature".into()));
    }
    Ok(out)
}

/// Extracts the pooled feature vector of one subject.
pub fn extract_subject(
    volume: &Volume,
    masks: &RoiMaskSet,
    config: &ExtractConfig,
) -> Result<(FeatureVector, DescriptorTable)> {
    ensure!(
        masks.dims() == volume.dims(),
        "mask dims {:?} differ from volume dims {:?}",
        masks.dims(),
        volume.dims()
    );
    let mut values = Vec::with_capacity(masks.len() * FEATURES_PER_ROI);
    for (name, mask) in masks.iter() {
        let block = extract_roi(volume, mask, config).map_err(|e| match e {
            Error::EmptyRoi(_) => Error::EmptyRoi(name.to_string()),
            other => other,
        })?;
        values.extend_from_slice(&block);
    }
    let names: Vec<&str> = masks.names().collect();
    Ok((FeatureVector(values), DescriptorTable::for_rois(&names)))
}

/// Writes `index,roi,family,name,value` rows.
pub fn write_feature_csv<W: Write>(mut w: W, table: &DescriptorTable, values: &FeatureVector) -> Result<()> {
    ensure!(
        table.len() == values.len(),
        "{} descriptors for {} values",
        table.len(),
        values.len()
    );
    writeln!(w, "index,roi,family,name,value")?;
    for (d, v) in table.descriptors().iter().zip(values.values()) {
        writeln!(w, "{},{},{},{},{:?}", d.index, d.roi, d.family.as_str(), d.name, v)?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(r: R) -> Result<(DescriptorTable, FeatureVector)> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "index,roi,family,name,value" {
        return Err(Error::Format(format!("unexpected feature CSV header `{header}`")));
    }
    let mut descriptors = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!("bad feature CSV row `{line}`")));
        }
        let bad = |what: &str| Error::Format(format!("bad {what} in `{line}`"));
        descriptors.push(FeatureDescriptor {
            index: cols[0].parse().map_err(|_| bad("index"))?,
            roi: cols[1].to_string(),
            family: FeatureFamily::parse(cols[2]).ok_or_else(|| bad("family"))?,
            name: cols[3].to_string(),
        });
        values.push(cols[4].parse().map_err(|_| bad("value"))?);
    }
    Ok((DescriptorTable::from_descriptors(descriptors)?, FeatureVector(values)))
}
