//! Gray-level texture matrices: co-occurrence (GLCM), run length (GLRLM) and
//! dependence (GLDM), all over 3D neighbourhoods at distance 1.

use super::discretize::LabelMap;

/// One representative of each ± pair of the 26 unit offsets.
pub const DIRECTIONS: [[isize; 3]; 13] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

pub const GLCM_NAMES: [&str; 6] = [
    "JointEnergy",
    "Contrast",
    "Correlation",
    "InverseDifferenceMoment",
    "JointEntropy",
    "Dissimilarity",
];

pub const GLRLM_NAMES: [&str; 4] = [
    "GrayLevelVariance",
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "RunLengthNonUniformity",
];

pub const GLDM_NAMES: [&str; 3] = [
    "DependenceNonUniformity",
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlcmFeatures {
    pub joint_energy: f64,
    pub contrast: f64,
    pub correlation: f64,
    pub inverse_difference_moment: f64,
    pub joint_entropy: f64,
    pub dissimilarity: f64,
    /// No direction had a valid voxel pair; values are the flat-region
    /// convention (energy 1, correlation 1, IDM 1, the rest 0).
    pub degenerate: bool,
}

impl GlcmFeatures {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.joint_energy,
            self.contrast,
            self.correlation,
            self.inverse_difference_moment,
            self.joint_entropy,
            self.dissimilarity,
        ]
    }

    fn degenerate() -> Self {
        Self {
            joint_energy: 1.0,
            contrast: 0.0,
            correlation: 1.0,
            inverse_difference_moment: 1.0,
            joint_entropy: 0.0,
            dissimilarity: 0.0,
            degenerate: true,
        }
    }
}

/// Iterates the labelled voxels inside the label map's bounding box.
fn for_each_voxel(labels: &LabelMap, mut f: impl FnMut(isize, isize, isize, u16)) {
    let Some((lo, hi)) = labels.bounds() else {
        return;
    };
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                let l = labels.at(z as isize, y as isize, x as isize);
                if l != 0 {
                    f(z as isize, y as isize, x as isize, l);
                }
            }
        }
    }
}

/// Symmetric co-occurrence counts for one direction, `ng × ng` row-major
/// with gray level `g` at index `g − 1`.
pub fn cooccurrence_matrix(labels: &LabelMap, direction: [isize; 3]) -> Vec<f64> {
    let ng = labels.bin_count();
    let mut p = vec![0.0; ng * ng];
    let [dz, dy, dx] = direction;
    for_each_voxel(labels, |z, y, x, a| {
        let b = labels.at(z + dz, y + dy, x + dx);
        if b != 0 {
            let (a, b) = (a as usize - 1, b as usize - 1);
            p[a * ng + b] += 1.0;
            p[b * ng + a] += 1.0;
        }
    });
    p
}

/// Features of one direction's matrix, or `None` if it has no pairs.
fn glcm_direction_features(counts: &[f64], ng: usize) -> Option<[f64; 6]> {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return None;
    }
    let mut mu = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            mu += (i + 1) as f64 * counts[i * ng + j] / total;
        }
    }
    let (mut energy, mut contrast, mut cross, mut var, mut idm, mut entropy, mut dissim) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..ng {
        for j in 0..ng {
            let c = counts[i * ng + j];
            if c == 0.0 {
                continue;
            }
            let p = c / total;
            let (gi, gj) = ((i + 1) as f64, (j + 1) as f64);
            let diff = gi - gj;
            energy += p * p;
            contrast += diff * diff * p;
            cross += gi * gj * p;
            var += (gi - mu) * (gi - mu) * p;
            idm += p / (1.0 + diff * diff);
            entropy -= p * p.log2();
            dissim += diff.abs() * p;
        }
    }
    // The matrix is symmetric, so both marginals share mean and variance.
    let correlation = if var > 0.0 {
        ((cross - mu * mu) / var).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    Some([energy, contrast, correlation, idm, entropy, dissim])
}

/// GLCM features averaged over the 13 directions that have at least one
/// valid voxel pair.
pub fn glcm_features(labels: &LabelMap) -> GlcmFeatures {
    let ng = labels.bin_count();
    let mut sum = [0.0; 6];
    let mut used = 0usize;
    for d in DIRECTIONS {
        if let Some(f) = glcm_direction_features(&cooccurrence_matrix(labels, d), ng) {
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
            used += 1;
        }
    }
    if used == 0 {
        return GlcmFeatures::degenerate();
    }
    let n = used as f64;
    GlcmFeatures {
        joint_energy: sum[0] / n,
        contrast: sum[1] / n,
        correlation: sum[2] / n,
        inverse_difference_moment: sum[3] / n,
        joint_entropy: sum[4] / n,
        dissimilarity: sum[5] / n,
        degenerate: false,
    }
}

/// Run counts indexed by (gray level − 1, run length − 1).
#[derive(Clone, Debug, PartialEq)]
pub struct RunMatrix {
    pub gray_levels: usize,
    pub max_run: usize,
    pub counts: Vec<f64>,
}

impl RunMatrix {
    fn new(gray_levels: usize, max_run: usize) -> Self {
        Self {
            gray_levels,
            max_run,
            counts: vec![0.0; gray_levels * max_run],
        }
    }

    pub fn get(&self, gray: usize, run: usize) -> f64 {
        self.counts[(gray - 1) * self.max_run + (run - 1)]
    }

    fn add(&mut self, other: &RunMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Maximal same-label runs of labelled voxels along `direction`.
pub fn run_length_matrix(labels: &LabelMap, direction: [isize; 3]) -> RunMatrix {
    let max_run = labels.dims().into_iter().max().unwrap_or(1);
    let mut m = RunMatrix::new(labels.bin_count(), max_run);
    let [dz, dy, dx] = direction;
    for_each_voxel(labels, |z, y, x, l| {
        if labels.at(z - dz, y - dy, x - dx) == l {
            return; // not the start of a run
        }
        let mut len = 1;
        while labels.at(z + dz * len, y + dy * len, x + dx * len) == l {
            len += 1;
        }
        m.counts[(l as usize - 1) * max_run + (len as usize - 1)] += 1.0;
    });
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlrlmFeatures {
    pub gray_level_variance: f64,
    pub short_run_emphasis: f64,
    pub long_run_emphasis: f64,
    pub run_length_non_uniformity: f64,
}

impl GlrlmFeatures {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.gray_level_variance,
            self.short_run_emphasis,
            self.long_run_emphasis,
            self.run_length_non_uniformity,
        ]
    }

    pub fn from_matrix(m: &RunMatrix) -> Self {
        let total: f64 = m.counts.iter().sum();
        let mut mu = 0.0;
        let mut run_totals = vec![0.0; m.max_run];
        for g in 0..m.gray_levels {
            for r in 0..m.max_run {
                let c = m.counts[g * m.max_run + r];
                mu += (g + 1) as f64 * c;
                run_totals[r] += c;
            }
        }
        mu /= total;
        let (mut glv, mut sre, mut lre) = (0.0, 0.0, 0.0);
        for g in 0..m.gray_levels {
            for r in 0..m.max_run {
                let c = m.counts[g * m.max_run + r];
                if c == 0.0 {
                    continue;
                }
                let len = (r + 1) as f64;
                let dg = (g + 1) as f64 - mu;
                glv += c * dg * dg;
                sre += c / (len * len);
                lre += c * len * len;
            }
        }
        let rlnu = run_totals.iter().map(|c| c * c).sum::<f64>();
        Self {
            gray_level_variance: glv / total,
            short_run_emphasis: sre / total,
            long_run_emphasis: lre / total,
            run_length_non_uniformity: rlnu / total,
        }
    }
}

/// GLRLM features of the run matrix summed over the 13 directions.
pub fn glrlm_features(labels: &LabelMap) -> GlrlmFeatures {
    let mut total = run_length_matrix(labels, DIRECTIONS[0]);
    for d in &DIRECTIONS[1..] {
        total.add(&run_length_matrix(labels, *d));
    }
    GlrlmFeatures::from_matrix(&total)
}

/// Dependence matrix counts indexed by (gray level − 1, dependence), where
/// dependence is the number of equal-label voxels among the 26 neighbours.
pub fn dependence_matrix(labels: &LabelMap) -> Vec<[f64; 27]> {
    let mut m = vec![[0.0; 27]; labels.bin_count()];
    for_each_voxel(labels, |z, y, x, l| {
        let mut dep = 0;
        for d in DIRECTIONS {
            if labels.at(z + d[0], y + d[1], x + d[2]) == l {
                dep += 1;
            }
            if labels.at(z - d[0], y - d[1], x - d[2]) == l {
                dep += 1;
            }
        }
        m[l as usize - 1][dep] += 1.0;
    });
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GldmFeatures {
    pub dependence_non_uniformity: f64,
    pub small_dependence_emphasis: f64,
    pub large_dependence_emphasis: f64,
}

impl GldmFeatures {
    pub fn to_array(&self) -> [f64; 3] {
        [
            self.dependence_non_uniformity,
            self.small_dependence_emphasis,
            self.large_dependence_emphasis,
        ]
    }
}

/// GLDM features; the matrix column for dependence `d` is `d + 1`.
pub fn gldm_features(labels: &LabelMap) -> GldmFeatures {
    let m = dependence_matrix(labels);
    let mut col_totals = [0.0; 27];
    let (mut total, mut sde, mut lde) = (0.0, 0.0, 0.0);
    for row in &m {
        for (dep, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let j = (dep + 1) as f64;
            col_totals[dep] += c;
            total += c;
            sde += c / (j * j);
            lde += c * j * j;
        }
    }
    let dnu = col_totals.iter().map(|c| c * c).sum::<f64>();
    GldmFeatures {
        dependence_non_uniformity: dnu / total,
        small_dependence_emphasis: sde / total,
        large_dependence_emphasis: lde / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(dims: [usize; 3], l: &[u16], bins: usize) -> LabelMap {
        LabelMap::from_labels(dims, l.to_vec(), bins).unwrap()
    }

    #[test]
    fn directions_cover_the_neighbourhood() {
        let mut all: Vec<[isize; 3]> = DIRECTIONS.to_vec();
        all.extend(DIRECTIONS.iter().map(|d| [-d[0], -d[1], -d[2]]));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 26);
    }

    #[test]
    fn constant_region_glcm() {
        let f = glcm_features(&labels([2, 2, 2], &[1; 8], 32));
        assert_eq!(f.joint_energy, 1.0);
        assert_eq!(f.contrast, 0.0);
        assert_eq!(f.correlation, 1.0);
        assert!(!f.degenerate);
    }

    #[test]
    fn two_voxel_pair() {
        let f = glcm_features(&labels([2, 1, 1], &[1, 2], 2));
        assert_eq!(f.contrast, 1.0);
        assert_eq!(f.joint_energy, 0.5);
        assert_eq!(f.correlation, -1.0);
    }

    #[test]
    fn checkerboard_matches_reference() {
        // Independent enumeration script: [0.5, 0.5, 0.0, 0.75, 1.0, 0.5]
        let l = labels([3, 3, 1], &[1, 2, 1, 2, 1, 2, 1, 2, 1], 2);
        let f = glcm_features(&l).to_array();
        let expected = [0.5, 0.5, 0.0, 0.75, 1.0, 0.5];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn isolated_voxel_is_degenerate() {
        let f = glcm_features(&labels([1, 1, 1], &[3], 4));
        assert!(f.degenerate);
        assert_eq!(f.joint_energy, 1.0);
        assert_eq!(f.correlation, 1.0);
    }

    #[test]
    fn single_run_long_emphasis_is_n_squared() {
        let n = 6;
        let l = labels([1, 1, n], &vec![1; n], 2);
        let axis = run_length_matrix(&l, [0, 0, 1]);
        assert_eq!(axis.get(1, n), 1.0);
        let f = GlrlmFeatures::from_matrix(&axis);
        assert_eq!(f.long_run_emphasis, (n * n) as f64);
    }

    #[test]
    fn all_unit_runs_short_emphasis_is_one() {
        let l = labels([1, 1, 4], &[1, 2, 1, 2], 2);
        let f = GlrlmFeatures::from_matrix(&run_length_matrix(&l, [0, 0, 1]));
        assert_eq!(f.short_run_emphasis, 1.0);
    }

    #[test]
    fn runs_of_two_match_reference() {
        // Independent run enumeration over all 13 directions: [0.25, 0.97, 1.12, 46.16]
        let l = labels([1, 1, 4], &[1, 1, 2, 2], 2);
        let f = glrlm_features(&l).to_array();
        for (a, b) in f.iter().zip([0.25, 0.97, 1.12, 46.16]) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
        let axis = GlrlmFeatures::from_matrix(&run_length_matrix(&l, [0, 0, 1]));
        assert_eq!(axis.to_array(), [0.25, 0.25, 4.0, 2.0]);
    }

    #[test]
    fn gldm_single_voxel_and_cube() {
        let f = gldm_features(&labels([1, 1, 1], &[1], 2));
        assert_eq!(f.small_dependence_emphasis, 1.0);
        let cube = labels([3, 3, 3], &[1; 27], 2);
        let m = dependence_matrix(&cube);
        assert_eq!(m[0][26], 1.0); // centre voxel sees all 26 neighbours
    }

    #[test]
    fn gldm_matches_reference() {
        // Independent neighbour count script: [2.5, 1/3, 7.0]
        let l = labels([2, 2, 1], &[1, 1, 1, 2], 2);
        let f = gldm_features(&l).to_array();
        for (a, b) in f.iter().zip([2.5, 1.0 / 3.0, 7.0]) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }
}
