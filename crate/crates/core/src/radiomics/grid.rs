use crate::error::{ensure, Result};

use super::volume::{Dims, Mask};

/// Centred crop extents as fractions (numerator over 10) of depth, height, width.
const CROP_TENTHS: [usize; 3] = [5, 3, 5];

/// Origin and extent of the centred crop that the grid cells tile.
pub fn grid_crop(dims: Dims) -> Result<(Dims, Dims)> {
    let mut origin = [0; 3];
    let mut extent = [0; 3];
    for a in 0..3 {
        // floor(fraction · dim), rounded down to an even split
        let e = (dims[a] * CROP_TENTHS[a] / 10) & !1;
        ensure!(
            e >= 2,
            "dims {dims:?} too small: axis {a} crop extent {e} leaves an empty grid cell"
        );
        extent[a] = e;
        origin[a] = (dims[a] - e) / 2;
    }
    Ok((origin, extent))
}

/// The 8 cells of a 2×2×2 partition of the centred crop, named
/// `grid_<d><h><w>` with 0 = lower half and 1 = upper half on each axis.
pub fn grid_rois(dims: Dims) -> Result<Vec<(String, Mask)>> {
    let (origin, extent) = grid_crop(dims)?;
    let half = [extent[0] / 2, extent[1] / 2, extent[2] / 2];
    let mut cells = Vec::with_capacity(8);
    for bz in 0..2 {
        for by in 0..2 {
            for bx in 0..2 {
                let lo = [
                    origin[0] + bz * half[0],
                    origin[1] + by * half[1],
                    origin[2] + bx * half[2],
                ];
                let hi = [lo[0] + half[0], lo[1] + half[1], lo[2] + half[2]];
                cells.push((format!("grid_{bz}{by}{bx}"), Mask::from_box(dims, lo, hi)));
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_dims() {
        let (origin, extent) = grid_crop([32, 128, 128]).unwrap();
        assert_eq!(extent, [16, 38, 64]);
        assert_eq!(origin, [8, 45, 32]);
        let cells = grid_rois([32, 128, 128]).unwrap();
        assert_eq!(cells.len(), 8);
        let (lo, hi) = cells[0].1.bounding_box().unwrap();
        assert_eq!([hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]], [8, 19, 32]);
    }

    #[test]
    fn cells_tile_the_crop() {
        let dims = [16, 32, 32];
        let (origin, extent) = grid_crop(dims).unwrap();
        let crop = Mask::from_box(
            dims,
            origin,
            [origin[0] + extent[0], origin[1] + extent[1], origin[2] + extent[2]],
        );
        let cells = grid_rois(dims).unwrap();
        let mut cover = vec![0u8; crop.data().len()];
        for (_, m) in &cells {
            for (c, v) in cover.iter_mut().zip(m.data()) {
                *c += v;
            }
        }
        // disjoint (no voxel covered twice) and the union is exactly the crop
        assert!(cover.iter().all(|&c| c <= 1));
        assert_eq!(cover, crop.data());
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(grid_rois([2, 32, 32]).is_err());
    }
}
