use rand::seq::SliceRandom;

use crate::autodiff::{rng_from_seed, Graph, Sgd};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::network::{NetKind, Network};

/// Mini-batch SGD on softmax cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains in place and returns the mean batch loss of each epoch. Zero epochs
/// leave the network untouched.
pub fn train_classifier(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if net.kind() != NetKind::Classifier {
        return Err(Error::InvalidConfig(format!("cannot train a {} as a classifier", net.kind())));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size is zero".into()));
    }
    let labels = data.labels_or_err()?;
    if data.is_empty() {
        return Err(Error::EmptyData("training set".into()));
    }
    net.check_input(&data.features)?;
    let mut opt = Sgd::new(cfg.learning_rate)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.features.select_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let input = g.input(x)?;
            let logits = net.forward(&mut g, input)?;
            let loss = g.softmax_cross_entropy(logits, &y)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
            }
            g.backward(loss)?;
            opt.step(net.params_mut(), &g.param_grads())?;
            total += value;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// Fraction of correctly classified samples.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data.labels_or_err()?;
    if data.is_empty() {
        return Err(Error::EmptyData("accuracy on an empty set".into()));
    }
    let predicted = net.predict_classes(&data.features)?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nets::ModelSpec;

    #[test]
    fn zero_epochs_is_identity() {
        let d = gen_blobs(2, 5, &[vec![0.0], vec![4.0]], 0.5, 0).unwrap();
        let mut net = Network::build(ModelSpec::mlp(&[1, 4, 2]).unwrap(), 1).unwrap();
        let before = net.param_bytes();
        let cfg = TrainConfig {
            epochs: 0,
            learning_rate: 0.1,
            batch_size: 4,
            seed: 0,
        };
        assert!(train_classifier(&mut net, &d, &cfg).unwrap().is_empty());
        assert_eq!(net.param_bytes(), before);
    }

    #[test]
    fn learns_separable_blobs() {
        let centers = [vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]];
        let d = gen_blobs(3, 60, &centers, 0.5, 2).unwrap();
        let mut net = Network::build(ModelSpec::mlp(&[2, 16, 3]).unwrap(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 4,
        };
        let losses = train_classifier(&mut net, &d, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        assert!(accuracy(&net, &d).unwrap() > 0.95);
    }
}
