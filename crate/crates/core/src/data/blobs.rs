use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::rng_from_seed;
use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_spread(spread: f64) -> Result<()> {
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "spread must be positive and finite, got {spread}"
        )));
    }
    Ok(())
}

/// Isotropic Gaussian clusters, one per center, `n_per_class` points each.
/// Samples are laid out class by class.
pub fn gen_blobs(
    num_classes: usize,
    n_per_class: usize,
    centers: &[Vec<f64>],
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    check_spread(spread)?;
    if num_classes == 0 || centers.len() != num_classes {
        return Err(Error::InvalidConfig(format!(
            "{num_classes} classes but {} centers",
            centers.len()
        )));
    }
    if n_per_class == 0 {
        return Err(Error::EmptyData("n_per_class is zero".into()));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::InvalidConfig("centers must share a positive dimension".into()));
    }
    for (i, a) in centers.iter().enumerate() {
        if centers[..i].contains(a) {
            return Err(Error::InvalidConfig(format!("center {i} repeats {a:?}")));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(num_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    Dataset::new(
        features,
        Some(labels),
        num_classes,
        Provenance::new("blobs", "all", Some(seed)),
    )
}

/// A single unlabeled Gaussian cluster used as OOD data.
pub fn gen_ood_blob(center: &[f64], n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    check_spread(spread)?;
    if n == 0 || center.is_empty() {
        return Err(Error::EmptyData("empty OOD blob".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        for &c in center {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(c + spread * z);
        }
    }
    let features = Tensor::new(vec![n, center.len()], data)?;
    Dataset::new(features, None, 0, Provenance::new("ood-blob", "all", Some(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers() -> Vec<Vec<f64>> {
        vec![vec![1.0, 2.0], vec![-3.0, 0.5]]
    }

    #[test]
    fn tiny_spread_collapses_to_centers() {
        let d = gen_blobs(2, 5, &centers(), 1e-300, 1).unwrap();
        for (i, &label) in d.labels.as_ref().unwrap().iter().enumerate() {
            assert_eq!(d.features.row(i), centers()[label].as_slice());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_blobs(2, 50, &centers(), 0.3, 9).unwrap();
        let b = gen_blobs(2, 50, &centers(), 0.3, 9).unwrap();
        assert_eq!(a.features.to_le_bytes(), b.features.to_le_bytes());
        let c = gen_blobs(2, 50, &centers(), 0.3, 10).unwrap();
        assert_ne!(a.features.to_le_bytes(), c.features.to_le_bytes());
    }

    #[test]
    fn class_means_near_centers() {
        let (n, spread) = (400, 0.8);
        let d = gen_blobs(2, n, &centers(), spread, 123).unwrap();
        let labels = d.labels.as_ref().unwrap();
        for (class, center) in centers().iter().enumerate() {
            for (k, &c) in center.iter().enumerate() {
                let mean: f64 = (0..d.len())
                    .filter(|&i| labels[i] == class)
                    .map(|i| d.features.row(i)[k])
                    .sum::<f64>()
                    / n as f64;
                assert!((mean - c).abs() < 3.0 * spread / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(gen_blobs(2, 5, &centers(), 0.0, 1).is_err());
        assert!(gen_blobs(2, 5, &centers(), -1.0, 1).is_err());
        assert!(gen_blobs(2, 5, &[vec![0.0, 0.0], vec![0.0, 0.0]], 1.0, 1).is_err());
        assert!(gen_blobs(3, 5, &centers(), 1.0, 1).is_err());
        assert!(gen_ood_blob(&[0.0], 5, 0.0, 1).is_err());
    }

    #[test]
    fn ood_blob_checks() {
        let a = gen_ood_blob(&[10.0, 10.0], 30, 0.5, 4).unwrap();
        let b = gen_ood_blob(&[10.0, 10.0], 30, 0.5, 4).unwrap();
        assert_eq!(a.features.to_le_bytes(), b.features.to_le_bytes());
        assert!(a.labels.is_none());
        let tight = gen_ood_blob(&[10.0, 10.0], 3, 1e-300, 4).unwrap();
        assert!(tight.features.data().iter().all(|&v| v == 10.0));
        let mean: f64 = (0..a.len()).map(|i| a.features.row(i)[0]).sum::<f64>() / 30.0;
        assert!((mean - 10.0).abs() < 3.0 * 0.5 / 30f64.sqrt());
    }
}
