//! Residual smoothing regularizer for small fully connected classifiers,
//! with a training harness built on manual batched backpropagation.

pub mod annealing;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod smoothing;
pub mod tensor;

pub use error::{Error, Result};
