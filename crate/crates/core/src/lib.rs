//! Converts a trained classifier into an out-of-distribution detector.
//!
//! The conversion duplicates the classifier, severs its prediction head,
//! attaches a fresh decoder and runs a few SGD steps on a reconstruction
//! loss. Features from the retrained encoder are then scored with a
//! class-conditional Mahalanobis confidence under a tied covariance.
//!
//! Module map:
//! - [`autodiff`]: tape-based reverse-mode differentiation and SGD
//! - [`nets`]: declarative networks, model surgery, model files
//! - [`detector`]: encoder retraining, Gaussian heads, confidence scoring
//! - [`baselines`]: maximum softmax probability and ODIN
//! - [`eval`]: AUROC, detection accuracy, reports, ablation grids
//! - [`data`]: synthetic generators, IDX/CSV ingestion, normalization, splits

pub mod autodiff;
pub mod baselines;
mod codec;
pub mod data;
pub mod detector;
mod error;
pub mod eval;
pub mod nets;
mod tensor;

pub use codec::write_atomic;
pub use error::{Error, Result};
pub use tensor::Tensor;
