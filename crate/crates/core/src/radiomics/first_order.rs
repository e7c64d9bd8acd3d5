use crate::error::{ensure, Error, Result};

use super::discretize::bin_of;
use super::volume::{Mask, Volume};

pub const FIRST_ORDER_NAMES: [&str; 10] = [
    "Mean", "Median", "Minimum", "Maximum", "Range", "Energy", "Entropy", "Variance", "Skewness", "Kurtosis",
];

/// Histogram resolution used by `Entropy`.
pub const ENTROPY_BINS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstOrderFeatures {
    pub mean: f64,
    pub median: f64,
    pub minimum: f64,
    pub maximum: f64,
    pub range: f64,
    pub energy: f64,
    pub entropy: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl FirstOrderFeatures {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.mean,
            self.median,
            self.minimum,
            self.maximum,
            self.range,
            self.energy,
            self.entropy,
            self.variance,
            self.skewness,
            self.kurtosis,
        ]
    }
}

/// Intensity statistics over the masked voxels.
///
/// Variance is the population variance; skewness is m3/m2^1.5 and kurtosis
/// m4/m2² (excess + 3). A constant region has skewness 0 and kurtosis 3.
pub fn first_order(volume: &Volume, mask: &Mask) -> Result<FirstOrderFeatures> {
    ensure!(
        volume.dims() == mask.dims(),
        "mask dims {:?} differ from volume dims {:?}",
        mask.dims(),
        volume.dims()
    );
    let mut values: Vec<f64> = volume
        .voxels()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v as f64)
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyRoi(String::new()));
    }
    Ok(first_order_of_values(&mut values))
}

/// Same statistics over a plain list of values (reordered in place).
pub fn first_order_of_values(values: &mut [f64]) -> FirstOrderFeatures {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut energy) = (0.0, 0.0, 0.0, 0.0);
    for &v in values.iter() {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        energy += v * v;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 3.0)
    };

    values.sort_by(|a, b| a.total_cmp(b));
    let len = values.len();
    let median = if len % 2 == 1 {
        values[len / 2]
    } else {
        0.5 * (values[len / 2 - 1] + values[len / 2])
    };
    let minimum = values[0];
    let maximum = values[len - 1];

    let mut hist = [0usize; ENTROPY_BINS];
    for &v in values.iter() {
        hist[bin_of(v, minimum, maximum - minimum, ENTROPY_BINS) as usize - 1] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();

    FirstOrderFeatures {
        mean,
        median,
        minimum,
        maximum,
        range: maximum - minimum,
        energy,
        entropy: entropy.max(0.0),
        variance: m2,
        skewness,
        kurtosis,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn of(values: &[f64]) -> FirstOrderFeatures {
        first_order_of_values(&mut values.to_vec())
    }

    #[test]
    fn constant_region() {
        let f = of(&[2.5; 7]);
        assert_eq!(f.mean, 2.5);
        assert_eq!(f.variance, 0.0);
        assert_eq!(f.skewness, 0.0);
        assert_eq!(f.kurtosis, 3.0);
        assert_eq!(f.range, 0.0);
        assert_eq!(f.entropy, 0.0);
    }

    #[test]
    fn symmetric_values() {
        let f = of(&[1.0, 2.0, 3.0]);
        assert_eq!(f.mean, 2.0);
        assert_eq!(f.median, 2.0);
        assert_eq!(f.skewness, 0.0);
    }

    #[test]
    fn skewed_values_match_reference() {
        // Reference values from an independent numpy script (m3/m2^1.5, m4/m2²).
        let f = of(&[1.0, 1.0, 1.0, 5.0]);
        assert!((f.skewness - 1.1547005383792515).abs() < 1e-12);
        assert!((f.kurtosis - 2.3333333333333335).abs() < 1e-12);
        assert_eq!(f.median, 1.0);
        assert_eq!(f.energy, 28.0);
        assert_eq!(f.variance, 3.0);
    }

    #[test]
    fn entropy_bounds() {
        let values: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let f = of(&values);
        assert!((f.entropy - 5.0).abs() < 1e-12);
        assert!(f.entropy <= (ENTROPY_BINS as f64).log2());
    }
}
