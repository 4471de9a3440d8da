use rand::seq::SliceRandom;

use crate::autodiff::rng_from_seed;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Train/fit/test fractions plus the size of the detector's training subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlan {
    pub train: f64,
    pub fit: f64,
    pub test: f64,
    pub detector_subset: usize,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.fit, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        if self.detector_subset == 0 {
            return Err(Error::InvalidConfig("detector subset size is zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub fit: Vec<usize>,
    pub test: Vec<usize>,
    /// Always a subset of `train`.
    pub detector_subset: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub fit: Dataset,
    pub test: Dataset,
    pub detector_subset: Dataset,
    pub indices: SplitIndices,
}

/// Seeded, label-stratified partition. Unlabeled data is treated as a single
/// class. Index lists are sorted.
pub fn split(d: &Dataset, plan: &SplitPlan, seed: u64) -> Result<Splits> {
    plan.validate()?;
    let mut rng = rng_from_seed(seed);
    let groups: Vec<Vec<usize>> = match &d.labels {
        Some(labels) => (0..d.num_classes)
            .map(|c| (0..d.len()).filter(|&i| labels[i] == c).collect())
            .collect(),
        None => vec![(0..d.len()).collect()],
    };
    let (mut train, mut fit, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        group.shuffle(&mut rng);
        let n = group.len();
        let n_train = (((n as f64) * plan.train).round() as usize).min(n);
        let n_fit = (((n as f64) * plan.fit).round() as usize).min(n - n_train);
        train.extend_from_slice(&group[..n_train]);
        fit.extend_from_slice(&group[n_train..n_train + n_fit]);
        test.extend_from_slice(&group[n_train + n_fit..]);
    }
    for part in [&mut train, &mut fit, &mut test] {
        part.sort_unstable();
        if part.is_empty() {
            return Err(Error::EmptyData(format!(
                "split of {} samples leaves an empty partition",
                d.len()
            )));
        }
    }
    if plan.detector_subset > train.len() {
        return Err(Error::InvalidConfig(format!(
            "detector subset of {} exceeds {} training samples",
            plan.detector_subset,
            train.len()
        )));
    }
    let mut pool = train.clone();
    pool.shuffle(&mut rng);
    let mut subset = pool[..plan.detector_subset].to_vec();
    subset.sort_unstable();

    Ok(Splits {
        train: d.select(&train, "train")?,
        fit: d.select(&fit, "fit")?,
        test: d.select(&test, "test")?,
        detector_subset: d.select(&subset, "detector_subset")?,
        indices: SplitIndices {
            train,
            fit,
            test,
            detector_subset: subset,
        },
    })
}
