//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::error::{ensure, Error, Result};
use crate::rng::{rng_for, stream};

use super::params::ParamSet;
use super::tensor::DenseTensor;

/// Compares the analytic gradient returned by `f` against central
/// differences at up to `max_coords` sampled coordinates.
///
/// Returns max |analytic − numeric| / (|analytic| + 1e-8).
pub fn finite_difference_check<F>(
    mut f: F,
    params: &ParamSet,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, Vec<DenseTensor>)>,
{
    ensure!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-7, 1e-3]"
    );
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    ensure!(
        analytic.len() == params.len(),
        "{} gradients for {} parameters",
        analytic.len(),
        params.len()
    );
    let coords: Vec<(usize, usize)> = params
        .tensors()
        .enumerate()
        .flat_map(|(t, tensor)| (0..tensor.len()).map(move |j| (t, j)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = rng_for(seed, &[stream::GRADCHECK]);
        let mut picked = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    };
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for c in chosen {
        let (t, j) = coords[c];
        let original = work.get(t).data()[j];
        work.get_mut(t).data_mut()[j] = original + epsilon;
        let (plus, _) = f(&work)?;
        work.get_mut(t).data_mut()[j] = original - epsilon;
        let (minus, _) = f(&work)?;
        work.get_mut(t).data_mut()[j] = original;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::Numeric("function value is not finite".into()));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let exact = analytic[t].data()[j];
        worst = worst.max((exact - numeric).abs() / (exact.abs() + 1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", DenseTensor::row(vec![w]));
        p
    }

    #[test]
    fn quadratic() {
        let err = finite_difference_check(
            |p| {
                let w = p.get(0).item();
                Ok((w * w, vec![DenseTensor::row(vec![2.0 * w])]))
            },
            &single(3.0),
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let err = finite_difference_check(
            |p| Ok((2.0 * p.get(0).item(), vec![DenseTensor::row(vec![2.0])])),
            &single(0.75),
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = finite_difference_check(
            |p| {
                let w = p.get(0).item();
                Ok((w * w, vec![DenseTensor::row(vec![w])]))
            },
            &single(3.0),
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn rejects_bad_epsilon_and_nan() {
        let p = single(1.0);
        assert!(finite_difference_check(|_| Ok((0.0, vec![DenseTensor::row(vec![0.0])])), &p, 1e-2, 1, 0).is_err());
        assert!(matches!(
            finite_difference_check(|_| Ok((f64::NAN, vec![DenseTensor::row(vec![0.0])])), &p, 1e-5, 1, 0),
            Err(Error::Numeric(_))
        ));
    }
}
