//! Component-wise transformation (CWT) attacks and the machinery around them:
//! differentiable block transforms, an MI-FGSM engine with
//! transformation-averaged gradients, a small convnet stack, Grad-CAM, and a
//! transferability evaluation harness.

pub mod attack;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod nn;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
