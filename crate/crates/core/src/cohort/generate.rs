use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::radiomics::{grid_rois, Dims, Mask, RoiMaskSet, Volume};
use crate::rng::{rng_for, stream, Rng};

/// Mean background intensity.
pub const BACKGROUND_LEVEL: f64 = 100.0;
/// Standard deviation of the smooth background; plant magnitudes are in these units.
pub const BACKGROUND_SD: f64 = 10.0;
/// Fine-grain noise added on top of the smooth background.
pub const GRAIN_SD: f64 = 3.0;
/// Name of the anatomical ROI added after the 8 grid cells.
pub const STRUCTURE_ROI: &str = "structure";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantEffect {
    /// Adds `magnitude · BACKGROUND_SD` to every voxel of the ROI.
    IntensityShift,
    /// Adds white noise with standard deviation `magnitude · BACKGROUND_SD`.
    NoiseBoost,
    /// Adds `± magnitude · BACKGROUND_SD` in a voxel checkerboard.
    CheckerTexture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub roi: String,
    pub effect: PlantEffect,
    pub magnitude: f64,
}

/// Per-class list of effects planted into subjects of that class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub per_class: Vec<Vec<Plant>>,
}

impl PlantSpec {
    pub fn none(classes: usize) -> Self {
        Self {
            per_class: vec![Vec::new(); classes],
        }
    }

    /// The default three-class signal: class 1 brightens the anatomical
    /// structure, class 2 roughens grid cell `grid_100`. Class 0 carries no
    /// plant. For other class counts, class `c ≥ 1` shifts grid cell `c − 1`.
    pub fn default_for(classes: usize) -> Self {
        let mut spec = Self::none(classes);
        if classes == 3 {
            spec.per_class[1].push(Plant {
                roi: STRUCTURE_ROI.into(),
                effect: PlantEffect::IntensityShift,
                magnitude: 1.0,
            });
            spec.per_class[2].push(Plant {
                roi: "grid_100".into(),
                effect: PlantEffect::NoiseBoost,
                magnitude: 1.0,
            });
        } else {
            for c in 1..classes {
                spec.per_class[c].push(Plant {
                    roi: format!("grid_{:03b}", (c - 1) % 8),
                    effect: PlantEffect::IntensityShift,
                    magnitude: 1.0,
                });
            }
        }
        spec
    }

    /// Multiplies every magnitude by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for plants in &mut self.per_class {
            for p in plants {
                p.magnitude *= factor;
            }
        }
        self
    }

    pub fn validate(&self, classes: usize, roi_names: &[String]) -> Result<()> {
        if self.per_class.len() != classes {
            return Err(Error::Config(format!(
                "plant spec lists {} classes, cohort has {classes}",
                self.per_class.len()
            )));
        }
        for plant in self.per_class.iter().flatten() {
            if !roi_names.contains(&plant.roi) {
                return Err(Error::Config(format!("plant references unknown ROI `{}`", plant.roi)));
            }
            if !plant.magnitude.is_finite() {
                return Err(Error::Config(format!(
                    "plant magnitude {} is not finite",
                    plant.magnitude
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub subjects: usize,
    pub dims: Dims,
    pub classes: usize,
    pub plants: PlantSpec,
    pub seed: u64,
}

impl CohortConfig {
    /// 120 subjects, 16×32×32 volumes, 3 classes, default plants.
    pub fn desk(seed: u64) -> Self {
        Self {
            subjects: 120,
            dims: [16, 32, 32],
            classes: 3,
            plants: PlantSpec::default_for(3),
            seed,
        }
    }
}

/// One generated subject before feature extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub volume: Volume,
    pub masks: RoiMaskSet,
    pub label: usize,
}

pub fn subject_id(i: usize) -> String {
    format!("s{:03}", i + 1)
}

/// Balanced labels (up to remainder), shuffled deterministically.
fn balanced_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut rng = rng_for(seed, &[stream::LABELS]);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Three passes of a radius-1 box filter along each axis.
fn smooth(field: &mut [f64], dims: Dims) {
    let [d, h, w] = dims;
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut tmp = vec![0.0; field.len()];
    for _ in 0..3 {
        for axis in 0..3 {
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        let c = [z, y, x];
                        let n = dims[axis];
                        let mut sum = 0.0;
                        let mut count = 0.0;
                        for off in [-1isize, 0, 1] {
                            let p = c[axis] as isize + off;
                            if p >= 0 && (p as usize) < n {
                                let mut q = c;
                                q[axis] = p as usize;
                                sum += field[idx(q[0], q[1], q[2])];
                                count += 1.0;
                            }
                        }
                        tmp[idx(z, y, x)] = sum / count;
                    }
                }
            }
            field.copy_from_slice(&tmp);
        }
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn background(dims: Dims, rng: &mut Rng) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    let mut field: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    smooth(&mut field, dims);
    let mean = field.iter().sum::<f64>() / n as f64;
    let sd = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    field
        .iter()
        .map(|v| BACKGROUND_LEVEL + BACKGROUND_SD * (v - mean) / sd + GRAIN_SD * normal(rng))
        .collect()
}

/// An ellipsoid near the volume centre with a small per-subject offset.
fn structure_mask(dims: Dims, rng: &mut Rng) -> Mask {
    let centre: Vec<f64> = dims
        .iter()
        .map(|&d| d as f64 / 2.0 - 0.5 + rng.gen_range(-1.0..=1.0))
        .collect();
    let radii: Vec<f64> = dims.iter().map(|&d| (d as f64 / 5.0).max(1.0)).collect();
    let mut m = Mask::empty(dims);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let r: f64 = [z, y, x]
                    .iter()
                    .zip(&centre)
                    .zip(&radii)
                    .map(|((&p, c), r)| ((p as f64 - c) / r).powi(2))
                    .sum();
                if r <= 1.0 {
                    m.set(z, y, x, true);
                }
            }
        }
    }
    m
}

/// ROI names in declaration order: 8 grid cells then the anatomical structure.
pub fn roi_names(dims: Dims) -> Result<Vec<String>> {
    let mut names: Vec<String> = grid_rois(dims)?.into_iter().map(|(n, _)| n).collect();
    names.push(STRUCTURE_ROI.to_string());
    Ok(names)
}

fn apply_plant(voxels: &mut [f64], dims: Dims, mask: &Mask, plant: &Plant, rng: &mut Rng) {
    let amp = plant.magnitude * BACKGROUND_SD;
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                if !mask.contains(z, y, x) {
                    continue;
                }
                let i = (z * dims[1] + y) * dims[2] + x;
                voxels[i] += match plant.effect {
                    PlantEffect::IntensityShift => amp,
                    PlantEffect::NoiseBoost => amp * normal(rng),
                    PlantEffect::CheckerTexture => {
                        if (z + y + x) % 2 == 0 {
                            amp
                        } else {
                            -amp
                        }
                    }
                };
            }
        }
    }
}

/// Generates subject `i` of a cohort with the given label.
pub fn generate_subject(config: &CohortConfig, i: usize, label: usize) -> Result<SubjectRecord> {
    let dims = config.dims;
    let mut rng = rng_for(config.seed, &[stream::BACKGROUND, i as u64]);
    let mut voxels = background(dims, &mut rng);
    let mut anatomy_rng = rng_for(config.seed, &[stream::ANATOMY, i as u64]);
    let mut rois = grid_rois(dims)?;
    rois.push((STRUCTURE_ROI.to_string(), structure_mask(dims, &mut anatomy_rng)));
    let masks = RoiMaskSet::new(dims, rois)?;
    let mut plant_rng = rng_for(config.seed, &[stream::PLANT, i as u64]);
    for plant in &config.plants.per_class[label] {
        let mask = masks
            .get(&plant.roi)
            .ok_or_else(|| Error::Config(format!("plant references unknown ROI `{}`", plant.roi)))?;
        apply_plant(&mut voxels, dims, mask, plant, &mut plant_rng);
    }
    let volume = Volume::new(dims, voxels.into_iter().map(|v| v as f32).collect())?;
    Ok(SubjectRecord {
        subject_id: subject_id(i),
        volume,
        masks,
        label,
    })
}

/// Generates a full cohort; fully determined by `config`.
pub fn generate_cohort(config: &CohortConfig) -> Result<Vec<SubjectRecord>> {
    use rayon::prelude::*;
    ensure!(config.classes >= 2, "need at least 2 classes");
    ensure!(
        config.subjects >= config.classes,
        "{} subjects cannot cover {} classes",
        config.subjects,
        config.classes
    );
    ensure!(
        config.dims.iter().all(|&d| d >= 8),
        "every volume dimension must be at least 8, got {:?}",
        config.dims
    );
    config.plants.validate(config.classes, &roi_names(config.dims)?)?;
    let labels = balanced_labels(config.subjects, config.classes, config.seed);
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| generate_subject(config, i, label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CohortConfig {
        CohortConfig {
            subjects: 6,
            dims: [8, 16, 16],
            classes: 3,
            plants: PlantSpec::default_for(3),
            seed,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_cohort(&small(5)).unwrap();
        let b = generate_cohort(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&small(6)).unwrap();
        assert_ne!(a[0].volume, c[0].volume);
    }

    #[test]
    fn labels_are_balanced() {
        let mut counts = [0; 3];
        for r in generate_cohort(&small(1)).unwrap() {
            counts[r.label] += 1;
        }
        assert_eq!(counts, [2, 2, 2]);
    }

    #[test]
    fn nine_rois_all_nonempty() {
        let r = &generate_cohort(&small(2)).unwrap()[0];
        assert_eq!(r.masks.len(), 9);
        assert!(r.masks.iter().all(|(_, m)| !m.is_empty()));
    }

    #[test]
    fn unknown_plant_roi_is_config_error() {
        let mut cfg = small(0);
        cfg.plants.per_class[1].push(Plant {
            roi: "nowhere".into(),
            effect: PlantEffect::NoiseBoost,
            magnitude: 1.0,
        });
        assert!(matches!(generate_cohort(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_tiny_dims_and_too_few_subjects() {
        let mut cfg = small(0);
        cfg.dims = [4, 16, 16];
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = small(0);
        cfg.subjects = 2;
        assert!(generate_cohort(&cfg).is_err());
    }

    #[test]
    fn intensity_shift_moves_the_roi_mean() {
        let mut cfg = small(3);
        cfg.plants = PlantSpec::none(3);
        cfg.plants.per_class[1].push(Plant {
            roi: STRUCTURE_ROI.into(),
            effect: PlantEffect::IntensityShift,
            magnitude: 2.0,
        });
        let plain = {
            let mut c = cfg.clone();
            c.plants = PlantSpec::none(3);
            c
        };
        let shifted = generate_subject(&cfg, 0, 1).unwrap();
        let base = generate_subject(&plain, 0, 1).unwrap();
        let m = shifted.masks.get(STRUCTURE_ROI).unwrap();
        let diff: Vec<f32> = shifted
            .volume
            .voxels()
            .iter()
            .zip(base.volume.voxels())
            .zip(m.data())
            .filter(|(_, &on)| on != 0)
            .map(|((a, b), _)| a - b)
            .collect();
        assert!(diff.iter().all(|d| (d - 20.0).abs() < 1e-3));
    }
}
