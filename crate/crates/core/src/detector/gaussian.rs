//! Class-conditional Gaussians with a tied covariance, and the Mahalanobis
//! confidence built on them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the diagonal regularizer λ added to the covariance is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 · trace(Σ) / d`.
    Auto,
    Fixed(f64),
}

impl Ridge {
    fn resolve(self, covariance: &[f64], d: usize) -> Result<f64> {
        match self {
            Ridge::Auto => {
                let trace: f64 = (0..d).map(|i| covariance[i * d + i]).sum();
                Ok(1e-6 * trace / d as f64)
            }
            Ridge::Fixed(l) if l.is_finite() && l >= 0.0 => Ok(l),
            Ridge::Fixed(l) => Err(Error::InvalidConfig(format!("ridge must be >= 0, got {l}"))),
        }
    }
}

/// Per-class means, one shared covariance Σ, and the lower Cholesky factor
/// of `Σ + λI` used for every distance evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    classes: Vec<usize>,
    means: Vec<Vec<f64>>,
    counts: Vec<u64>,
    dim: usize,
    covariance: Vec<f64>,
    ridge: f64,
    factor: Vec<f64>,
}

/// Lower-triangular `L` with `L·Lᵀ = a` for a row-major `d × d` matrix.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let pivot = a[i * d + i] - dot;
                if !(pivot > 0.0 && pivot.is_finite()) {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: pivot });
                }
                l[i * d + i] = pivot.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - dot) / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L·y = b` by forward substitution.
fn solve_lower(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * d + i];
    }
    y
}

/// Solves `Lᵀ·x = y` by back substitution.
fn solve_upper_t(l: &[f64], d: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    x
}

/// Fits class means and the pooled within-class covariance (normalized by the
/// total sample count) from `features: [N, d]`.
pub fn fit_head(features: &Tensor, labels: &[usize], ridge: Ridge) -> Result<GaussianHead> {
    if features.rank() != 2 {
        return Err(Error::shape("fit_head", format!("features {:?}", features.shape())));
    }
    let (n, d) = (features.rows(), features.row_len());
    if labels.len() != n {
        return Err(Error::CountMismatch(format!("{} labels for {n} samples", labels.len())));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, u64)> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        let entry = sums.entry(c).or_insert_with(|| (vec![0.0; d], 0));
        for (s, v) in entry.0.iter_mut().zip(features.row(i)) {
            *s += v;
        }
        entry.1 += 1;
    }
    let classes: Vec<usize> = sums.keys().copied().collect();
    let counts: Vec<u64> = sums.values().map(|(_, k)| *k).collect();
    let means: Vec<Vec<f64>> = sums
        .values()
        .map(|(s, k)| s.iter().map(|v| v / *k as f64).collect())
        .collect();

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for (i, c) in labels.iter().enumerate() {
        let mean = &means[classes.binary_search(c).expect("class seen")];
        for ((z, v), m) in centered.iter_mut().zip(features.row(i)).zip(mean) {
            *z = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= n as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let lambda = ridge.resolve(&cov, d)?;
    GaussianHead::from_parts(classes, means, counts, cov, lambda)
}

/// Like [`fit_head`], but every class in `expected` must have samples.
pub fn fit_head_for_classes(
    features: &Tensor,
    labels: &[usize],
    expected: &[usize],
    ridge: Ridge,
) -> Result<GaussianHead> {
    if let Some(&missing) = expected.iter().find(|c| !labels.contains(c)) {
        return Err(Error::EmptyClass(missing));
    }
    fit_head(features, labels, ridge)
}

impl GaussianHead {
    /// Assembles a head from explicit statistics and factors `Σ + λI`.
    pub fn from_parts(
        classes: Vec<usize>,
        means: Vec<Vec<f64>>,
        counts: Vec<u64>,
        covariance: Vec<f64>,
        ridge: f64,
    ) -> Result<Self> {
        let k = classes.len();
        if k == 0 || means.len() != k || counts.len() != k {
            return Err(Error::EmptyData("a head needs at least one class".into()));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) || covariance.len() != dim * dim {
            return Err(Error::shape("gaussian head", format!("dim {dim} inconsistent")));
        }
        if let Some(pos) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(classes[pos]));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
        }
        for a in 0..dim {
            for b in 0..a {
                if (covariance[a * dim + b] - covariance[b * dim + a]).abs() > 1e-10 {
                    return Err(Error::InvalidConfig("covariance is not symmetric".into()));
                }
            }
        }
        let mut regularized = covariance.clone();
        for i in 0..dim {
            regularized[i * dim + i] += ridge;
        }
        let factor = cholesky(&regularized, dim)?;
        Ok(Self {
            classes,
            means,
            counts,
            dim,
            covariance,
            ridge,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn mean(&self, class: usize) -> Option<&[f64]> {
        self.classes
            .binary_search(&class)
            .ok()
            .map(|i| self.means[i].as_slice())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Lower Cholesky factor of `Σ + λI`, row-major.
    pub fn precision_factor(&self) -> &[f64] {
        &self.factor
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim {
            return Err(Error::shape(
                "mahalanobis",
                format!("feature of length {} for head of dim {}", f.len(), self.dim),
            ));
        }
        Ok(())
    }

    /// Squared Mahalanobis distance from `f` to every class mean.
    pub fn distances(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        let mut diff = vec![0.0; self.dim];
        Ok(self
            .means
            .iter()
            .map(|m| {
                for ((z, a), b) in diff.iter_mut().zip(f).zip(m) {
                    *z = a - b;
                }
                solve_lower(&self.factor, self.dim, &diff)
                    .iter()
                    .map(|y| y * y)
                    .sum()
            })
            .collect())
    }

    /// `(index of closest class, confidence)` where confidence is the negated
    /// smallest squared distance.
    pub fn closest(&self, f: &[f64]) -> Result<(usize, f64)> {
        let d = self.distances(f)?;
        let mut best = 0;
        for (i, v) in d.iter().enumerate() {
            if *v < d[best] {
                best = i;
            }
        }
        Ok((best, -d[best]))
    }

    /// `max_c -(f - μ_c)ᵀ (Σ + λI)⁻¹ (f - μ_c)`; never positive.
    pub fn confidence(&self, f: &[f64]) -> Result<f64> {
        self.closest(f).map(|(_, c)| c)
    }

    /// Gradient of [`GaussianHead::confidence`] with respect to `f`:
    /// `-2 (Σ + λI)⁻¹ (f - μ*)` for the closest class.
    pub fn confidence_grad(&self, f: &[f64]) -> Result<Vec<f64>> {
        let (best, _) = self.closest(f)?;
        let diff: Vec<f64> = f.iter().zip(&self.means[best]).map(|(a, b)| a - b).collect();
        let y = solve_lower(&self.factor, self.dim, &diff);
        let x = solve_upper_t(&self.factor, self.dim, &y);
        Ok(x.into_iter().map(|v| -2.0 * v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn identity_head(means: &[&[f64]]) -> GaussianHead {
        let d = means[0].len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        GaussianHead::from_parts(
            (0..means.len()).collect(),
            means.iter().map(|m| m.to_vec()).collect(),
            vec![1; means.len()],
            cov,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn class_mean_is_arithmetic_mean() {
        let f = rows(&[&[1.0, 0.0], &[3.0, 0.0], &[0.0, 1.0], &[0.0, 2.0]]);
        let head = fit_head(&f, &[0, 0, 1, 1], Ridge::Fixed(0.5)).unwrap();
        assert_eq!(head.mean(0).unwrap(), &[2.0, 0.0]);
    }

    #[test]
    fn tied_covariance_example() {
        let f = rows(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0], &[0.0, 4.0]]);
        let head = fit_head(&f, &[0, 0, 1, 1], Ridge::Fixed(0.0)).unwrap();
        assert_eq!(head.mean(0).unwrap(), &[1.0, 0.0]);
        assert_eq!(head.mean(1).unwrap(), &[0.0, 3.0]);
        assert_eq!(head.covariance(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(head.total(), 4);
    }

    #[test]
    fn one_sample_per_class_needs_ridge() {
        let f = rows(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let err = fit_head(&f, &[0, 1], Ridge::Fixed(0.0)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        let head = fit_head(&f, &[0, 1], Ridge::Fixed(1e-6)).unwrap();
        assert!(head.covariance().iter().all(|v| *v == 0.0));
        assert_eq!(head.ridge(), 1e-6);
    }

    #[test]
    fn auto_ridge_scales_with_trace() {
        let f = rows(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0], &[0.0, 4.0]]);
        let head = fit_head(&f, &[0, 0, 1, 1], Ridge::Auto).unwrap();
        assert!((head.ridge() - 1e-6 * 1.0 / 2.0).abs() < 1e-20);
    }

    #[test]
    fn missing_expected_class() {
        let f = rows(&[&[0.0], &[1.0]]);
        assert!(matches!(
            fit_head_for_classes(&f, &[0, 0], &[0, 1], Ridge::Auto),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn confidence_examples() {
        let head = identity_head(&[&[0.0, 0.0]]);
        assert_eq!(head.confidence(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(head.confidence(&[3.0, 4.0]).unwrap(), -25.0);
        let two = identity_head(&[&[0.0, 0.0], &[10.0, 0.0]]);
        assert_eq!(two.confidence(&[1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn gradient_at_one_dimensional_head() {
        let head = identity_head(&[&[0.0]]);
        assert_eq!(head.confidence_grad(&[2.0]).unwrap(), vec![-4.0]);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.5, 0.6, 1.5, 3.0];
        let l = cholesky(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - a[i * 3 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let err = GaussianHead::from_parts(
            vec![0],
            vec![vec![0.0, 0.0]],
            vec![1],
            vec![1.0, 0.5, 0.0, 1.0],
            0.0,
        );
        assert!(err.is_err());
    }
}
