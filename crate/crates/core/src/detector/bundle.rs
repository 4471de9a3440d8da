use std::collections::BTreeMap;
use std::thread;

use crate::autodiff::Graph;
use crate::detector::gaussian::{fit_head, GaussianHead, Ridge};
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::tensor::Tensor;

/// A frozen classifier deployed next to a detector branch: an encoder, one
/// Gaussian head per tap and the weights combining their confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBundle {
    frozen_classifier: Network,
    encoder: Network,
    heads: BTreeMap<String, GaussianHead>,
    weights: BTreeMap<String, f64>,
    preprocess: Option<f64>,
}

impl DetectorBundle {
    /// `weights = None` gives every tap weight `1 / taps`.
    pub fn new(
        frozen_classifier: Network,
        encoder: Network,
        heads: BTreeMap<String, GaussianHead>,
        weights: Option<BTreeMap<String, f64>>,
        preprocess: Option<f64>,
    ) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidConfig("a detector needs at least one head".into()));
        }
        for (name, head) in &heads {
            encoder.spec().tap(name)?;
            let probe = encoder.extract_features(&probe_input(&encoder)?, std::slice::from_ref(name))?;
            let d = probe[name].row_len();
            if d != head.dim() {
                return Err(Error::shape(
                    "detector bundle",
                    format!("tap `{name}` yields {d} features, head expects {}", head.dim()),
                ));
            }
        }
        let weights = match weights {
            Some(w) => {
                if w.keys().ne(heads.keys()) {
                    return Err(Error::InvalidConfig(
                        "ensemble weights must name exactly the fitted taps".into(),
                    ));
                }
                if w.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidConfig("ensemble weights must be >= 0".into()));
                }
                if w.values().all(|&v| v == 0.0) {
                    return Err(Error::InvalidConfig("ensemble weights are all zero".into()));
                }
                w
            }
            None => {
                let u = 1.0 / heads.len() as f64;
                heads.keys().map(|k| (k.clone(), u)).collect()
            }
        };
        if let Some(eps) = preprocess {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "preprocessing epsilon must be > 0, got {eps}"
                )));
            }
        }
        Ok(Self {
            frozen_classifier,
            encoder,
            heads,
            weights,
            preprocess,
        })
    }

    /// Fits one head per tap on encoder features of labeled in-distribution data.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        frozen_classifier: Network,
        encoder: Network,
        taps: &[String],
        x: &Tensor,
        labels: &[usize],
        ridge: Ridge,
        weights: Option<BTreeMap<String, f64>>,
        preprocess: Option<f64>,
    ) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidConfig("no taps selected".into()));
        }
        let features = encoder.extract_features(x, taps)?;
        let heads = features
            .iter()
            .map(|(t, f)| Ok((t.clone(), fit_head(f, labels, ridge)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::new(frozen_classifier, encoder, heads, weights, preprocess)
    }

    pub fn classifier(&self) -> &Network {
        &self.frozen_classifier
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn heads(&self) -> &BTreeMap<String, GaussianHead> {
        &self.heads
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn preprocess(&self) -> Option<f64> {
        self.preprocess
    }

    pub fn with_preprocess(mut self, eps: Option<f64>) -> Result<Self> {
        if let Some(e) = eps {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "preprocessing epsilon must be > 0, got {e}"
                )));
            }
        }
        self.preprocess = eps;
        Ok(self)
    }

    fn taps(&self) -> Vec<String> {
        self.heads.keys().cloned().collect()
    }

    /// Weighted Mahalanobis confidence of each row of `x`, without
    /// preprocessing.
    pub fn confidence(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.encoder.check_input(x)?;
        let features = self.encoder.extract_features(x, &self.taps())?;
        let mut out = vec![0.0; x.rows()];
        for (tap, head) in &self.heads {
            let w = self.weights[tap];
            let f = &features[tap];
            for (i, o) in out.iter_mut().enumerate() {
                *o += w * head.confidence(f.row(i))?;
            }
        }
        Ok(out)
    }

    /// Gradient of each row's confidence with respect to that row's input.
    pub fn confidence_input_grad(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.check_input(x)?;
        let taps = self.taps();
        let mut g = Graph::new();
        let input = g.input(x.clone())?;
        let nodes = self.encoder.feature_nodes(&mut g, input, &taps)?;
        let mut seeds = Vec::with_capacity(nodes.len());
        for (tap, &node) in taps.iter().zip(&nodes) {
            let head = &self.heads[tap];
            let w = self.weights[tap];
            let f = g.value(node);
            let mut seed = Vec::with_capacity(f.len());
            for i in 0..f.rows() {
                seed.extend(head.confidence_grad(f.row(i))?.into_iter().map(|v| w * v));
            }
            seeds.push((node, seed));
        }
        g.backward_seeded(&seeds)?;
        let grad = g
            .grad(input)
            .map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);
        Tensor::new(x.shape().to_vec(), grad)
    }

    /// `x + ε · sign(∇ₓ C(x))`, moving each input toward higher confidence.
    pub fn preprocess_input(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "preprocessing epsilon must be > 0, got {eps}"
            )));
        }
        let grad = self.confidence_input_grad(x)?;
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(v, g)| v + eps * sign(*g))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// The deployed detector score: confidence after optional preprocessing.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        match self.preprocess {
            Some(eps) => self.confidence(&self.preprocess_input(x, eps)?),
            None => self.confidence(x),
        }
    }

    /// `score(x) > δ` per row.
    pub fn is_in_distribution(&self, x: &Tensor, threshold: f64) -> Result<Vec<bool>> {
        Ok(self.score(x)?.into_iter().map(|c| c > threshold).collect())
    }

    /// Runs the classifier and the detector branch on separate threads and
    /// joins their results.
    pub fn predict_and_score(&self, x: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
        let (classes, scores) = thread::scope(|s| {
            let predict = s.spawn(|| self.frozen_classifier.predict_classes(x));
            let scores = self.score(x);
            (predict.join().expect("classifier branch panicked"), scores)
        });
        Ok((classes?, scores?))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn probe_input(net: &Network) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(&net.spec().input_shape);
    Ok(Tensor::zeros(&shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Parameter;
    use crate::nets::{Activation, LayerSpec, ModelSpec, NetKind, Tap};

    /// A 1-D linear encoder computing `f(x) = x`.
    fn identity_encoder() -> Network {
        let spec = ModelSpec::new(
            vec![1],
            vec![LayerSpec::dense(1, 1, Activation::Linear)],
            vec![Tap::layer("z", 0), Tap::input("x")],
        )
        .unwrap();
        Network::from_parts(
            spec,
            NetKind::Encoder,
            vec![
                Parameter::new("l0.weight", Tensor::new(vec![1, 1], vec![1.0]).unwrap()),
                Parameter::new("l0.bias", Tensor::zeros(&[1])),
            ],
        )
        .unwrap()
    }

    fn classifier() -> Network {
        Network::build(ModelSpec::mlp(&[1, 2]).unwrap(), 0).unwrap()
    }

    fn unit_head() -> GaussianHead {
        GaussianHead::from_parts(vec![0], vec![vec![0.0]], vec![1], vec![1.0], 0.0).unwrap()
    }

    fn bundle(preprocess: Option<f64>) -> DetectorBundle {
        let heads = BTreeMap::from([("z".to_string(), unit_head())]);
        DetectorBundle::new(classifier(), identity_encoder(), heads, None, preprocess).unwrap()
    }

    #[test]
    fn analytic_gradient_step() {
        let b = bundle(None);
        let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(b.confidence(&x).unwrap(), vec![-4.0]);
        assert_eq!(b.confidence_input_grad(&x).unwrap().data(), &[-4.0]);
        let eps = 0.01;
        let moved = b.preprocess_input(&x, eps).unwrap();
        assert_eq!(moved.data(), &[2.0 - eps]);
        assert!(b.preprocess_input(&x, 0.0).is_err());
    }

    #[test]
    fn thresholds() {
        let b = bundle(None);
        let x = Tensor::new(vec![2, 1], vec![0.0, 5.0]).unwrap();
        assert_eq!(b.is_in_distribution(&x, -1.0).unwrap(), vec![true, false]);
        assert_eq!(b.is_in_distribution(&x, 1.0).unwrap(), vec![false, false]);
    }

    #[test]
    fn ensemble_weighting() {
        let heads = BTreeMap::from([("z".to_string(), unit_head()), ("x".to_string(), unit_head())]);
        let w = BTreeMap::from([("z".to_string(), 0.25), ("x".to_string(), 0.0)]);
        let b = DetectorBundle::new(classifier(), identity_encoder(), heads.clone(), Some(w), None)
            .unwrap();
        let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(b.confidence(&x).unwrap(), vec![-1.0]);
        let u = DetectorBundle::new(classifier(), identity_encoder(), heads.clone(), None, None)
            .unwrap();
        assert_eq!(u.weights()["x"], 0.5);
        let zeros = BTreeMap::from([("z".to_string(), 0.0), ("x".to_string(), 0.0)]);
        assert!(DetectorBundle::new(classifier(), identity_encoder(), heads, Some(zeros), None)
            .is_err());
    }

    #[test]
    fn rejects_unknown_tap_and_wrong_dim() {
        let heads = BTreeMap::from([("nope".to_string(), unit_head())]);
        assert!(matches!(
            DetectorBundle::new(classifier(), identity_encoder(), heads, None, None),
            Err(Error::UnknownTap(_))
        ));
        let wide = GaussianHead::from_parts(vec![0], vec![vec![0.0, 0.0]], vec![1], vec![1.0, 0.0, 0.0, 1.0], 0.0)
            .unwrap();
        let heads = BTreeMap::from([("z".to_string(), wide)]);
        assert!(DetectorBundle::new(classifier(), identity_encoder(), heads, None, None).is_err());
    }

    #[test]
    fn parallel_branches_match_sequential() {
        let b = bundle(Some(0.1));
        let x = Tensor::new(vec![3, 1], vec![0.5, -1.0, 3.0]).unwrap();
        let (classes, scores) = b.predict_and_score(&x).unwrap();
        assert_eq!(classes, b.classifier().predict_classes(&x).unwrap());
        assert_eq!(scores, b.score(&x).unwrap());
        // Preprocessing moved every sample toward the mean.
        let raw = b.confidence(&x).unwrap();
        assert!(scores.iter().zip(&raw).all(|(s, r)| s > r));
    }
}
