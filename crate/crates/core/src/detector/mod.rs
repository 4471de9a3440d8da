//! Converting a classifier into a detector: encoder retraining, Gaussian
//! heads over encoder features, and the deployed bundle.

mod bundle;
mod gaussian;
pub mod io;
mod retrain;

pub use bundle::DetectorBundle;
pub use gaussian::{cholesky, fit_head, fit_head_for_classes, GaussianHead, Ridge};
pub use retrain::{
    frozen_encoder, retrain_encoder, retrain_from, vanilla_autoencoder, EncoderStart,
    ReconstructionLoss, RetrainConfig, Retrained,
};
