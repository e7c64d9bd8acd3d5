use crate::error::{ensure, Error, Result};

use super::volume::{Dims, Mask, Volume};

/// Gray-level labels over a masked region. Label 0 marks voxels outside the
/// mask; masked voxels carry labels in `1..=bin_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    labels: Vec<u16>,
    bin_count: usize,
}

impl LabelMap {
    /// Builds a label map directly; used by tests and oracles.
    pub fn from_labels(dims: Dims, labels: Vec<u16>, bin_count: usize) -> Result<Self> {
        ensure!(
            labels.len() == dims[0] * dims[1] * dims[2],
            "label count {} does not match dims {dims:?}",
            labels.len()
        );
        ensure!(bin_count >= 1, "bin_count must be positive");
        ensure!(
            labels.iter().all(|&l| (l as usize) <= bin_count),
            "labels must lie in 0..={bin_count}"
        );
        Ok(Self {
            dims,
            labels,
            bin_count,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Label at a signed coordinate; 0 when outside the grid or the mask.
    #[inline]
    pub fn at(&self, z: isize, y: isize, x: isize) -> u16 {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z as usize >= d || y as usize >= h || x as usize >= w {
            return 0;
        }
        self.labels[(z as usize * h + y as usize) * w + x as usize]
    }

    /// Bounding box of labelled voxels.
    pub(crate) fn bounds(&self) -> Option<(Dims, Dims)> {
        let [d, h, w] = self.dims;
        let mut lo = self.dims;
        let mut hi = [0; 3];
        let mut any = false;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if self.labels[(z * h + y) * w + x] != 0 {
                        any = true;
                        for (a, v) in [z, y, x].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v + 1);
                        }
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }

    pub fn voxel_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Uniform min-max binning of the masked intensities into `bin_count` levels.
///
/// A constant region maps entirely to label 1; the maximum maps to `bin_count`.
pub fn discretize(volume: &Volume, mask: &Mask, bin_count: usize) -> Result<LabelMap> {
    ensure!(bin_count >= 2, "bin_count must be at least 2, got {bin_count}");
    ensure!(bin_count <= u16::MAX as usize, "bin_count {bin_count} too large");
    ensure!(
        volume.dims() == mask.dims(),
        "mask dims {:?} differ from volume dims {:?}",
        mask.dims(),
        volume.dims()
    );
    let masked = volume
        .voxels()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v as f64);
    let (min, max) = masked.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if min > max {
        return Err(Error::EmptyRoi(String::new()));
    }
    let width = max - min;
    let labels = volume
        .voxels()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| {
            if m == 0 {
                0
            } else {
                bin_of(v as f64, min, width, bin_count)
            }
        })
        .collect();
    Ok(LabelMap {
        dims: volume.dims(),
        labels,
        bin_count,
    })
}

#[inline]
pub(crate) fn bin_of(v: f64, min: f64, width: f64, bin_count: usize) -> u16 {
    if width == 0.0 {
        return 1;
    }
    let b = ((v - min) / width * bin_count as f64).floor() as usize;
    (b.min(bin_count - 1) + 1) as u16
}
