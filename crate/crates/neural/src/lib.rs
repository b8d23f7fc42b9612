//! A small, dependency-light neural network engine: the layer kinds needed
//! for 1D-CNN and CNN-LSTM binary classifiers, exact reverse-mode gradients,
//! Adam, binary cross-entropy and a deterministic mini-batch trainer.
//!
//! All layers are generic over [`Real`], so the same code trains at 32-bit
//! precision and is gradient-checked at 64-bit precision.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layer;
pub mod network;
pub mod ops;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{NeuralError, Result};
pub use layer::{Layer, LayerSpec};
pub use network::{Gradients, Network};
pub use optim::{adam_step, Adam, AdamConfig};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{train, train_with_callback, TrainConfig, TrainReport};
