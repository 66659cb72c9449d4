//! Minimal neural-network engine: dense and 1-D conv layers, manual
//! backpropagation, Adam, early stopping. Networks are plain values; a
//! single train call is single-threaded so results are reproducible.

pub mod adam;
pub mod backward;
pub mod loss;
pub mod network;
pub mod spec;
pub mod train;

pub use adam::adam_step;
pub use backward::{backward, Gradients};
pub use loss::cross_entropy;
pub use network::Network;
pub use spec::{Activation, LayerSpec, ModelSpec};
pub use train::{train, TrainConfig, TrainOutcome};
