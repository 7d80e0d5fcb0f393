//! Minimal neural-network core: layer kernels, sequential networks with manual
//! backpropagation, and the Adam optimiser.

mod adam;
mod network;
pub mod ops;

pub use adam::{AdamConfig, AdamState};
pub use network::{accumulate, ForwardCache, Grads, LayerSpec, Network};
pub use ops::mse_loss;
