use crate::error::{ensure, Error, Result};

/// (depth, height, width).
pub type Dims = [usize; 3];

pub(crate) fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Scalar 3D image, depth-major row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        ensure!(
            dims.iter().all(|&d| d > 0),
            "volume dims must be positive, got {dims:?}"
        );
        ensure!(
            voxels.len() == voxel_count(dims),
            "dims {dims:?} need {} voxels, got {}",
            voxel_count(dims),
            voxels.len()
        );
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("volume contains non-finite intensities".into()));
        }
        Ok(Self { dims, voxels })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            voxels: vec![value; voxel_count(dims)],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }
}

/// Binary mask with the same layout as a [`Volume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        ensure!(dims.iter().all(|&d| d > 0), "mask dims must be positive, got {dims:?}");
        ensure!(
            data.len() == voxel_count(dims),
            "dims {dims:?} need {} mask values, got {}",
            voxel_count(dims),
            data.len()
        );
        ensure!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Ok(Self { dims, data })
    }

    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0; voxel_count(dims)],
        }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![1; voxel_count(dims)],
        }
    }

    /// Box `[lo, hi)` along each axis.
    pub fn from_box(dims: Dims, lo: Dims, hi: Dims) -> Self {
        let mut m = Self::empty(dims);
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    m.set(z, y, x, true);
                }
            }
        }
        m
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[(z * self.dims[1] + y) * self.dims[2] + x] != 0
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, on: bool) {
        let i = (z * self.dims[1] + y) * self.dims[2] + x;
        self.data[i] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Inclusive-exclusive bounding box of the set voxels.
    pub fn bounding_box(&self) -> Option<(Dims, Dims)> {
        let mut lo = self.dims;
        let mut hi = [0; 3];
        let mut any = false;
        for z in 0..self.dims[0] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[2] {
                    if self.contains(z, y, x) {
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
}

/// Named ROI masks over one volume grid; names are unique and ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiMaskSet {
    dims: Dims,
    rois: Vec<(String, Mask)>,
}

impl RoiMaskSet {
    pub fn new(dims: Dims, rois: Vec<(String, Mask)>) -> Result<Self> {
        ensure!(!rois.is_empty(), "at least one ROI is required");
        for (i, (name, mask)) in rois.iter().enumerate() {
            ensure!(
                mask.dims() == dims,
                "ROI `{name}` has dims {:?}, expected {dims:?}",
                mask.dims()
            );
            ensure!(rois[..i].iter().all(|(n, _)| n != name), "duplicate ROI name `{name}`");
        }
        Ok(Self { dims, rois })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rois.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mask)> {
        self.rois.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn get(&self, name: &str) -> Option<&Mask> {
        self.rois.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}
