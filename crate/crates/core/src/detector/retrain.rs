//! Few-step reconstruction retraining of a classifier's encoder.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{rng_from_seed, Graph, Sgd};
use crate::error::{Error, Result};
use crate::nets::{sever_and_attach, NetKind, Network, SurgeryPlan};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconstructionLoss {
    #[default]
    Mse,
    /// Per-element binary cross-entropy on decoder logits; targets in `[0, 1]`.
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sever_at: usize,
    pub seed: u64,
    pub loss: ReconstructionLoss,
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("retraining needs at least one step".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size is zero".into()));
        }
        Sgd::new(self.learning_rate).map(|_| ())
    }
}

/// Which weights the encoder starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderStart {
    /// A copy of the trained classifier's layers.
    Pretrained,
    /// Freshly initialized layers of the same architecture (plain autoencoder).
    Untrained,
}

#[derive(Debug, Clone)]
pub struct Retrained {
    /// The encoder half only.
    pub encoder: Network,
    /// Batch loss before each update, one entry per step.
    pub loss_trace: Vec<f64>,
}

/// Duplicates `classifier`, replaces its head with a fresh decoder and runs
/// exactly `cfg.steps` SGD steps on the reconstruction loss. The classifier
/// itself is never modified.
pub fn retrain_encoder(
    classifier: &Network,
    plan: &SurgeryPlan,
    cfg: &RetrainConfig,
    data: &Tensor,
) -> Result<Retrained> {
    retrain_from(classifier, plan, cfg, data, EncoderStart::Pretrained)
}

/// Same procedure on an untrained copy of the architecture.
pub fn vanilla_autoencoder(
    classifier: &Network,
    plan: &SurgeryPlan,
    cfg: &RetrainConfig,
    data: &Tensor,
) -> Result<Retrained> {
    retrain_from(classifier, plan, cfg, data, EncoderStart::Untrained)
}

pub fn retrain_from(
    classifier: &Network,
    plan: &SurgeryPlan,
    cfg: &RetrainConfig,
    data: &Tensor,
    start: EncoderStart,
) -> Result<Retrained> {
    cfg.validate()?;
    if cfg.sever_at != plan.sever_at {
        return Err(Error::InvalidConfig(format!(
            "config severs at {} but the plan at {}",
            cfg.sever_at, plan.sever_at
        )));
    }
    if data.rank() < 2 || data.rows() == 0 {
        return Err(Error::EmptyData("retraining data".into()));
    }
    classifier.check_input(data)?;

    let mut rng = rng_from_seed(cfg.seed);
    let decoder_seed: u64 = rng.random();
    let encoder_seed: u64 = rng.random();

    let copy = match start {
        EncoderStart::Pretrained => classifier.duplicate(),
        EncoderStart::Untrained => {
            Network::build_as(classifier.spec().clone(), NetKind::Classifier, encoder_seed)?
        }
    };
    let mut coupled = sever_and_attach(&copy, plan, decoder_seed)?;
    let mut opt = Sgd::new(cfg.learning_rate)?;

    let n = data.rows();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        if cursor >= n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch).min(n);
        let x = data.select_rows(&order[cursor..end])?;
        cursor = end;

        let mut g = Graph::new();
        let input = g.input(x)?;
        let recon = coupled.forward(&mut g, input)?;
        let loss = match cfg.loss {
            ReconstructionLoss::Mse => g.mse(recon, input)?,
            ReconstructionLoss::BinaryCrossEntropy => g.bce_with_logits(recon, input)?,
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("reconstruction loss at step {step}")));
        }
        trace.push(value);
        g.backward(loss)?;
        opt.step(coupled.params_mut(), &g.param_grads())?;
    }

    Ok(Retrained {
        encoder: coupled.encoder_half()?,
        loss_trace: trace,
    })
}

/// The encoder prefix of the classifier, untouched (no retraining).
pub fn frozen_encoder(classifier: &Network, sever_at: usize) -> Result<Network> {
    SurgeryPlan::mirrored(classifier.spec(), sever_at)?;
    classifier.truncate(sever_at, NetKind::Encoder)
}
