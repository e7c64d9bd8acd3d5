//! On-disk cohort layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/features.json              (after extraction)
//! <dir>/volumes/<subject>.vol
//! <dir>/masks/<subject>/<roi>.msk
//! ```
//!
//! Volume and mask files share one binary layout: magic `STRVVOL`, a `u32`
//! version, three `u32` dims (depth, height, width), then the payload:
//! little-endian `f32` intensities for volumes, one `u8` per voxel for masks.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomics::{DescriptorTable, Dims, FeatureVector, Mask, RoiMaskSet, Volume};

use super::generate::{PlantSpec, SubjectRecord};
use super::normalize::FeatureStats;
use super::split::Split;

pub const VOLUME_MAGIC: &[u8; 7] = b"STRVVOL";
pub const VOLUME_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub label: usize,
    pub volume: String,
    pub masks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub fractions: (f64, f64),
    pub seed: u64,
}

/// Everything about a cohort except the voxel payloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub version: u32,
    pub classes: usize,
    pub dims: Dims,
    pub seed: u64,
    pub plants: PlantSpec,
    pub roi_names: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<DescriptorTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<FeatureStats>,
}

impl CohortManifest {
    pub fn labels(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn splits(&self) -> Option<Vec<Split>> {
        self.subjects.iter().map(|s| s.split).collect()
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.subject_id == id)
    }
}

/// A cohort in memory: manifest, records and (optionally) raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub records: Vec<SubjectRecord>,
    pub features: Option<Vec<FeatureVector>>,
}

impl Cohort {
    /// Wraps freshly generated records.
    pub fn from_records(records: Vec<SubjectRecord>, classes: usize, seed: u64, plants: PlantSpec) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Contract("a cohort needs at least one subject".into()))?;
        let dims = first.volume.dims();
        let roi_names: Vec<String> = first.masks.names().map(String::from).collect();
        let subjects = records
            .iter()
            .map(|r| SubjectEntry {
                subject_id: r.subject_id.clone(),
                label: r.label,
                volume: format!("volumes/{}.vol", r.subject_id),
                masks: r
                    .masks
                    .names()
                    .map(|roi| format!("masks/{}/{roi}.msk", r.subject_id))
                    .collect(),
                split: None,
            })
            .collect();
        Ok(Self {
            manifest: CohortManifest {
                version: MANIFEST_VERSION,
                classes,
                dims,
                seed,
                plants,
                roi_names,
                subjects,
                feature_count: None,
                descriptors: None,
                split: None,
                normalization: None,
            },
            records,
            features: None,
        })
    }
}

fn write_header<W: Write>(w: &mut W, dims: Dims) -> Result<()> {
    w.write_all(VOLUME_MAGIC)?;
    w.write_all(&VOLUME_VERSION.to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Contract(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Dims> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != VOLUME_MAGIC {
        return Err(Error::Format(format!("bad volume magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version > VOLUME_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VOLUME_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::Format("volume version 0".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut word)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() > 1 << 30 {
        return Err(Error::Format(format!("implausible dims {dims:?}")));
    }
    Ok(dims)
}

pub fn write_volume<W: Write>(mut w: W, volume: &Volume) -> Result<()> {
    write_header(&mut w, volume.dims())?;
    for v in volume.voxels() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_volume<R: Read>(mut r: R) -> Result<Volume> {
    let dims = read_header(&mut r)?;
    let n = dims[0] * dims[1] * dims[2];
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let voxels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(dims, voxels).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_mask<W: Write>(mut w: W, mask: &Mask) -> Result<()> {
    write_header(&mut w, mask.dims())?;
    w.write_all(mask.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_mask<R: Read>(mut r: R) -> Result<Mask> {
    let dims = read_header(&mut r)?;
    let mut data = vec![0u8; dims[0] * dims[1] * dims[2]];
    r.read_exact(&mut data)?;
    Mask::new(dims, data).map_err(|e| Error::Format(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::from(e).at_path(parent))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::from(e).at_path(path))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    Ok(BufReader::new(f))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn features_path(dir: &Path) -> PathBuf {
    dir.join("features.json")
}

pub fn save_manifest(dir: &Path, manifest: &CohortManifest) -> Result<()> {
    let path = manifest_path(dir);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, manifest).map_err(|e| Error::from(e).at_path(&path))?;
    w.flush()?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<CohortManifest> {
    let path = manifest_path(dir);
    let manifest: CohortManifest = serde_json::from_reader(open(&path)?).map_err(|e| Error::from(e).at_path(&path))?;
    if manifest.version > MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            supported: MANIFEST_VERSION,
        }
        .at_path(&path));
    }
    Ok(manifest)
}

pub fn save_features(dir: &Path, features: &[FeatureVector]) -> Result<()> {
    let path = features_path(dir);
    let mut w = create(&path)?;
    serde_json::to_writer(&mut w, features).map_err(|e| Error::from(e).at_path(&path))?;
    w.flush()?;
    Ok(())
}

pub fn load_features(dir: &Path) -> Result<Option<Vec<FeatureVector>>> {
    let path = features_path(dir);
    if !path.exists() {
        return Ok(None);
    }
    let f: Vec<FeatureVector> = serde_json::from_reader(open(&path)?).map_err(|e| Error::from(e).at_path(&path))?;
    Ok(Some(f))
}

/// Writes manifest, volumes, masks and (if present) features under `dir`.
pub fn save_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
    for (entry, record) in cohort.manifest.subjects.iter().zip(&cohort.records) {
        let path = dir.join(&entry.volume);
        write_volume(create(&path)?, &record.volume).map_err(|e| e.at_path(&path))?;
        for (rel, (_, mask)) in entry.masks.iter().zip(record.masks.iter()) {
            let path = dir.join(rel);
            write_mask(create(&path)?, mask).map_err(|e| e.at_path(&path))?;
        }
    }
    if let Some(features) = &cohort.features {
        save_features(dir, features)?;
    }
    save_manifest(dir, &cohort.manifest)
}

/// Reads a cohort written by [`save_cohort`]. Nothing is returned unless
/// every file parses.
pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest = load_manifest(dir)?;
    let mut records = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let path = dir.join(&entry.volume);
        let volume = read_volume(open(&path)?).map_err(|e| e.at_path(&path))?;
        let mut rois = Vec::with_capacity(entry.masks.len());
        for (rel, name) in entry.masks.iter().zip(&manifest.roi_names) {
            let path = dir.join(rel);
            rois.push((name.clone(), read_mask(open(&path)?).map_err(|e| e.at_path(&path))?));
        }
        if rois.len() != manifest.roi_names.len() {
            return Err(Error::Format(format!(
                "subject {} lists {} masks for {} ROIs",
                entry.subject_id,
                rois.len(),
                manifest.roi_names.len()
            )));
        }
        records.push(SubjectRecord {
            subject_id: entry.subject_id.clone(),
            masks: RoiMaskSet::new(volume.dims(), rois)?,
            volume,
            label: entry.label,
        });
    }
    let features = load_features(dir)?;
    if let Some(f) = &features {
        if f.len() != records.len() {
            return Err(Error::Format(format!(
                "{} feature vectors for {} subjects",
                f.len(),
                records.len()
            )));
        }
    }
    Ok(Cohort {
        manifest,
        records,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_bytes_round_trip() {
        let v = Volume::new([1, 2, 2], vec![1.5, -0.0, f32::MAX, 3.25]).unwrap();
        let mut buf = Vec::new();
        write_volume(&mut buf, &v).unwrap();
        assert_eq!(&buf[..7], b"STRVVOL");
        assert_eq!(buf.len(), 7 + 4 + 12 + 16);
        assert_eq!(read_volume(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn mask_bytes_round_trip() {
        let m = Mask::new([2, 1, 2], vec![0, 1, 1, 0]).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert_eq!(read_mask(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn header_errors() {
        let v = Volume::filled([1, 1, 2], 1.0);
        let mut buf = Vec::new();
        write_volume(&mut buf, &v).unwrap();
        let mut bad = buf.clone();
        bad[3] = b'?';
        assert!(matches!(read_volume(bad.as_slice()), Err(Error::Format(_))));
        let mut newer = buf.clone();
        newer[7..11].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            read_volume(newer.as_slice()),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        assert!(matches!(read_volume(&buf[..buf.len() - 1]), Err(Error::Io(_))));
    }
}
