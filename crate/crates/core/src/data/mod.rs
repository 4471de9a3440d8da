//! In-distribution and OOD dataset supply.
//!
//! Generators are seeded and bit-reproducible. Normalization statistics are
//! always fitted on a training split and recorded in the provenance of every
//! dataset they are applied to.

mod blobs;
mod glyphs;
mod idx;
mod normalize;
mod split;
mod table;

pub use blobs::{gen_blobs, gen_ood_blob};
pub use glyphs::{gen_glyphs, GlyphCorpus, GLYPH_SIDE};
pub use idx::{load_idx, parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use normalize::{normalize, Normalization};
pub use split::{split, SplitIndices, SplitPlan, Splits};
pub use table::{load_csv, write_csv};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub name: String,
    pub split: String,
    pub seed: Option<u64>,
    pub normalization: Option<Normalization>,
}

impl Provenance {
    pub fn new(name: impl Into<String>, split: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            name: name.into(),
            split: split.into(),
            seed,
            normalization: None,
        }
    }
}

/// Samples along the leading dimension of `features`, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.rank() < 2 {
            return Err(Error::shape(
                "dataset",
                format!("features need a leading sample axis, got {:?}", features.shape()),
            ));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite(format!("dataset `{}`", provenance.name)));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(Error::CountMismatch(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    features.rows()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::EmptyData(format!("dataset `{}` has no labels", self.provenance.name)))
    }

    /// Subset by sample indices, tagged with a new split name.
    pub fn select(&self, indices: &[usize], split: &str) -> Result<Self> {
        let features = self.features.select_rows(indices)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let mut provenance = self.provenance.clone();
        provenance.split = split.to_string();
        Self::new(features, labels, self.num_classes, provenance)
    }

    /// Sequential batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> Vec<(Tensor, Option<Vec<usize>>)> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|start| {
                let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
                let x = self.features.select_rows(&idx).expect("indices in range");
                let y = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
                (x, y)
            })
            .collect()
    }
}
