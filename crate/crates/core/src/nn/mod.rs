//! Quaternion and real layers, the model graph, built-in architectures and
//! the checkpoint format.

mod activation;
pub mod checkpoint;
mod conv;
mod graph;
mod linear;
mod norm;
mod pool;
mod qconv;
pub mod zoo;

pub use activation::{split_activation, ActivationKind};
pub use conv::{real_conv2d, ConvGeometry, RealConvLayer};
pub use graph::{convert_architecture, ActShape, InputSpec, Layer, LayerSpec, ModelGraph, Saved, Task};
pub use linear::{qlinear, LinearLayer, QLinearLayer};
pub use norm::{split_batchnorm, BatchNormLayer, BnCache, Mode, BN_EPS, BN_MOMENTUM};
pub use pool::{split_pool, PoolKind};
pub use qconv::{qconv2d, QConvLayer};
