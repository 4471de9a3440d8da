//! Network construction, model surgery and model files.

pub mod io;
pub(crate) mod network;
mod spec;
mod surgery;
mod train;

pub use network::{NetKind, Network};
pub use spec::{Activation, LayerKind, LayerSpec, ModelSpec, Tap, TapRef};
pub use surgery::{sever_and_attach, SurgeryPlan};
pub use train::{accuracy, train_classifier, TrainConfig};
