use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-dimension standardization fitted on one training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions with zero variance; their scale was clamped to 1.
    pub clamped: Vec<usize>,
    /// `name/split` of the dataset the statistics came from.
    pub fitted_on: String,
}

impl Normalization {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyData("normalization needs training samples".into()));
        }
        let d = train.features.row_len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(train.features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..train.len() {
            for ((s, v), m) in var.iter_mut().zip(train.features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut clamped = Vec::new();
        let scale = var
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    clamped.push(k);
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            scale,
            clamped,
            fitted_on: format!("{}/{}", train.provenance.name, train.provenance.split),
        })
    }

    /// `(x - mean) / scale` on raw values, with no bookkeeping. Applying this
    /// twice is not the same as applying it once.
    pub fn apply_raw(&self, x: &Tensor) -> Result<Tensor> {
        if x.row_len() != self.mean.len() {
            return Err(Error::shape(
                "normalize",
                format!("{} dims vs {} fitted", x.row_len(), self.mean.len()),
            ));
        }
        let d = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.scale[i % d])
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// Normalizes a dataset once; a second application is refused.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.provenance.normalization.is_some() {
            return Err(Error::AlreadyNormalized);
        }
        let mut out = d.clone();
        out.features = self.apply_raw(&d.features)?;
        out.provenance.normalization = Some(self.clone());
        Ok(out)
    }
}

/// Fits on `train` and applies the same statistics to every dataset.
pub fn normalize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let stats = Normalization::fit(train)?;
    let train_out = stats.apply(train)?;
    let rest = others.iter().map(|d| stats.apply(d)).collect::<Result<_>>()?;
    Ok((train_out, rest))
}
