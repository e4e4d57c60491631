//! Built-in desk-scale architectures.

use super::conv::{ConvGeometry, RealConvLayer};
use super::graph::{InputSpec, Layer, ModelGraph, Task};
use super::linear::{LinearLayer, QLinearLayer};
use super::norm::BatchNormLayer;
use super::pool::PoolKind;
use super::qconv::QConvLayer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

pub const QCNN_MINI: &str = "qcnn-mini";
pub const QRESNET_MINI: &str = "qresnet-mini";
pub const CNN_MINI: &str = "cnn-mini";

/// Real-channel widths of the six conv blocks of `qcnn-mini` / `cnn-mini`.
pub const MINI_WIDTHS: [usize; 6] = [16, 32, 64, 128, 256, 256];
const MINI_POOLED_BLOCKS: usize = 4;
const MINI_HIDDEN: usize = 128;

fn conv3() -> ConvGeometry {
    ConvGeometry::square(3, 1, 1)
}

fn pool<T: Scalar>() -> Layer<T> {
    Layer::Pool { kind: PoolKind::Avg, window: 2, stride: 2 }
}

fn check_input(input: &InputSpec) -> Result<()> {
    if input.channels % 4 != 0 || input.channels == 0 {
        return Err(Error::invalid(format!(
            "input needs a positive multiple of 4 real channels, got {}",
            input.channels
        )));
    }
    Ok(())
}

/// Six quaternion conv blocks (conv → split BN → split ReLU, average pooling
/// after the first four while the map is at least 2×2), global average
/// pooling, a quaternion hidden layer and a real classifier.
pub fn qcnn_mini<T: Scalar, R: Rng + ?Sized>(input: InputSpec, classes: usize, task: Task, rng: &mut R) -> Result<ModelGraph<T>> {
    check_input(&input)?;
    let mut layers = Vec::new();
    let (mut q, mut h, mut w) = (input.channels / 4, input.height, input.width);
    for (b, &width) in MINI_WIDTHS.iter().enumerate() {
        let qo = width / 4;
        layers.push(Layer::QConv(QConvLayer::init(q, qo, conv3(), true, rng)));
        layers.push(Layer::BatchNorm(BatchNormLayer::new(width)));
        layers.push(Layer::Relu);
        if b < MINI_POOLED_BLOCKS && h >= 2 && w >= 2 {
            layers.push(pool());
            h /= 2;
            w /= 2;
        }
        q = qo;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::QLinear(QLinearLayer::init(q, MINI_HIDDEN / 4, true, rng)));
    layers.push(Layer::Relu);
    layers.push(Layer::Linear(LinearLayer::init(MINI_HIDDEN, classes, true, rng)));
    let m = ModelGraph::new(QCNN_MINI, input, classes, task, layers);
    m.validate()?;
    Ok(m)
}

/// Real-valued control with the same real-channel widths as `qcnn-mini`.
pub fn cnn_mini<T: Scalar, R: Rng + ?Sized>(input: InputSpec, classes: usize, task: Task, rng: &mut R) -> Result<ModelGraph<T>> {
    if input.channels == 0 {
        return Err(Error::invalid("input needs at least one channel"));
    }
    let mut layers = Vec::new();
    let (mut c, mut h, mut w) = (input.channels, input.height, input.width);
    for (b, &width) in MINI_WIDTHS.iter().enumerate() {
        layers.push(Layer::Conv(RealConvLayer::init(c, width, conv3(), true, rng)));
        layers.push(Layer::BatchNorm(BatchNormLayer::new(width)));
        layers.push(Layer::Relu);
        if b < MINI_POOLED_BLOCKS && h >= 2 && w >= 2 {
            layers.push(pool());
            h /= 2;
            w /= 2;
        }
        c = width;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(LinearLayer::init(c, MINI_HIDDEN, true, rng)));
    layers.push(Layer::Relu);
    layers.push(Layer::Linear(LinearLayer::init(MINI_HIDDEN, classes, true, rng)));
    let m = ModelGraph::new(CNN_MINI, input, classes, task, layers);
    m.validate()?;
    Ok(m)
}

fn qres_block<T: Scalar, R: Rng + ?Sized>(q: usize, rng: &mut R) -> Layer<T> {
    Layer::Residual(vec![
        Layer::QConv(QConvLayer::init(q, q, conv3(), false, rng)),
        Layer::BatchNorm(BatchNormLayer::new(4 * q)),
        Layer::Relu,
        Layer::QConv(QConvLayer::init(q, q, conv3(), false, rng)),
        Layer::BatchNorm(BatchNormLayer::new(4 * q)),
    ])
}

/// Quaternion stem, two residual blocks, then two prunable quaternion conv
/// layers and a real classifier.
pub fn qresnet_mini<T: Scalar, R: Rng + ?Sized>(input: InputSpec, classes: usize, task: Task, rng: &mut R) -> Result<ModelGraph<T>> {
    check_input(&input)?;
    let q_stem = 8;
    let (mut h, mut w) = (input.height, input.width);
    let mut layers = vec![
        Layer::QConv(QConvLayer::init(input.channels / 4, q_stem, conv3(), true, rng)),
        Layer::BatchNorm(BatchNormLayer::new(4 * q_stem)),
        Layer::Relu,
    ];
    for _ in 0..2 {
        if h >= 2 && w >= 2 {
            layers.push(pool());
            h /= 2;
            w /= 2;
        }
        layers.push(qres_block(q_stem, rng));
    }
    layers.push(Layer::QConv(QConvLayer::init(q_stem, 32, conv3(), true, rng)));
    layers.push(Layer::BatchNorm(BatchNormLayer::new(128)));
    layers.push(Layer::Relu);
    layers.push(Layer::QConv(QConvLayer::init(32, 64, conv3(), true, rng)));
    layers.push(Layer::BatchNorm(BatchNormLayer::new(256)));
    layers.push(Layer::Relu);
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(LinearLayer::init(256, classes, true, rng)));
    let m = ModelGraph::new(QRESNET_MINI, input, classes, task, layers);
    m.validate()?;
    Ok(m)
}

/// Builds a named architecture.
pub fn build<T: Scalar, R: Rng + ?Sized>(arch: &str, input: InputSpec, classes: usize, task: Task, rng: &mut R) -> Result<ModelGraph<T>> {
    match arch {
        QCNN_MINI => qcnn_mini(input, classes, task, rng),
        QRESNET_MINI => qresnet_mini(input, classes, task, rng),
        CNN_MINI => cnn_mini(input, classes, task, rng),
        other => Err(Error::invalid(format!(
            "unknown model `{other}` (expected {QCNN_MINI}, {QRESNET_MINI} or {CNN_MINI})"
        ))),
    }
}

/// How many trailing top-level quaternion conv layers are pruned by default.
pub fn default_prunable_tail(arch: &str) -> Option<usize> {
    match arch {
        QCNN_MINI => Some(3),
        QRESNET_MINI => Some(2),
        _ => None,
    }
}
