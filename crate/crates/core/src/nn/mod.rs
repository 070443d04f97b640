//! A small differentiable convnet stack: forward, backward to parameters
//! and inputs, cross-entropy, SGD training.

mod checkpoint;
mod model;
mod spec;
mod train;

pub use checkpoint::Checkpoint;
pub use model::{cross_entropy, Gradients, LayerParams, Model};
pub use spec::{Layer, ModelSpec, Shape};
pub use train::{accuracy, predictions, train, train_model, TrainConfig};
