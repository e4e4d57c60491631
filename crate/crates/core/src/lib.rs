//! Quaternion convolutional networks and their compression.
//!
//! The crate provides Hamilton-product convolution layers, a small
//! reverse-mode trainer, log-mel quaternion feature encoding, data-independent
//! quaternion filter pruning (l1, geometric median, operator norm) with model
//! surgery, knowledge distillation, and evaluation/cost metrics.

pub mod autodiff;
pub mod distill;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod quat;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use quat::{hamilton_product, QTensor, Quaternion};
pub use scalar::Scalar;
pub use tensor::{Act, Matrix, Tensor4};
