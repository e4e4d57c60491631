//! Layer list with shape metadata: the unit of training, checkpointing,
//! architecture conversion and surgery.

use super::activation::{relu_backward, relu_in_place};
use super::conv::{ConvGeometry, RealConvLayer};
use super::linear::{LinearLayer, QLinearLayer};
use super::norm::{BatchNormLayer, BnCache, Mode};
use super::pool::{global_avg_backward, global_avg_forward, pool_backward, pool_forward, PoolKind};
use super::qconv::QConvLayer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Act, Matrix, Tensor4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Real-channel input shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// One class per example; softmax cross-entropy, accuracy.
    Single,
    /// Any subset of classes; per-class sigmoid, mAP.
    Multi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(RealConvLayer<T>),
    QConv(QConvLayer<T>),
    BatchNorm(BatchNormLayer<T>),
    Relu,
    Pool { kind: PoolKind, window: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Linear(LinearLayer<T>),
    QLinear(QLinearLayer<T>),
    /// `relu(body(x) + x)`.
    Residual(Vec<Layer<T>>),
}

/// Structural description of a layer, without weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { c_in: usize, c_out: usize, geom: ConvGeometry, bias: bool },
    QConv { q_in: usize, q_out: usize, geom: ConvGeometry, bias: bool },
    BatchNorm { channels: usize },
    Relu,
    Pool { kind: PoolKind, window: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Linear { in_features: usize, out_features: usize, bias: bool },
    QLinear { q_in: usize, q_out: usize, bias: bool },
    Residual { body: Vec<LayerSpec> },
}

/// Shape of an activation between layers, in real channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Saved<T> {
    None,
    Input(Act<T>),
    Output(Act<T>),
    BatchNorm(BnCache<T>),
    Pool { in_dims: (usize, usize, usize, usize), argmax: Vec<usize> },
    Reshape { in_dims: (usize, usize, usize, usize) },
    Residual { body: Vec<Saved<T>>, output: Act<T> },
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(l) => LayerSpec::Conv { c_in: l.c_in, c_out: l.c_out, geom: l.geom, bias: l.bias.is_some() },
            Layer::QConv(l) => LayerSpec::QConv { q_in: l.q_in, q_out: l.q_out, geom: l.geom, bias: l.bias.is_some() },
            Layer::BatchNorm(l) => LayerSpec::BatchNorm { channels: l.channels },
            Layer::Relu => LayerSpec::Relu,
            Layer::Pool { kind, window, stride } => LayerSpec::Pool { kind: *kind, window: *window, stride: *stride },
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
                bias: l.bias.is_some(),
            },
            Layer::QLinear(l) => LayerSpec::QLinear { q_in: l.q_in, q_out: l.q_out, bias: l.bias.is_some() },
            Layer::Residual(body) => LayerSpec::Residual { body: body.iter().map(Layer::spec).collect() },
        }
    }

    /// Zero-weight layer (BN at identity statistics) built from a spec.
    pub fn from_spec(spec: &LayerSpec) -> Self {
        match spec {
            LayerSpec::Conv { c_in, c_out, geom, bias } => Layer::Conv(RealConvLayer::zeros(*c_in, *c_out, *geom, *bias)),
            LayerSpec::QConv { q_in, q_out, geom, bias } => Layer::QConv(QConvLayer::zeros(*q_in, *q_out, *geom, *bias)),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNormLayer::new(*channels)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Pool { kind, window, stride } => Layer::Pool { kind: *kind, window: *window, stride: *stride },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Linear { in_features, out_features, bias } => {
                Layer::Linear(LinearLayer::zeros(*in_features, *out_features, *bias))
            }
            LayerSpec::QLinear { q_in, q_out, bias } => Layer::QLinear(QLinearLayer::zeros(*q_in, *q_out, *bias)),
            LayerSpec::Residual { body } => Layer::Residual(body.iter().map(Layer::from_spec).collect()),
        }
    }

    /// Freshly initialized layer built from a spec.
    pub fn init_from_spec<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        match spec {
            LayerSpec::Conv { c_in, c_out, geom, bias } => Layer::Conv(RealConvLayer::init(*c_in, *c_out, *geom, *bias, rng)),
            LayerSpec::QConv { q_in, q_out, geom, bias } => Layer::QConv(QConvLayer::init(*q_in, *q_out, *geom, *bias, rng)),
            LayerSpec::Linear { in_features, out_features, bias } => {
                Layer::Linear(LinearLayer::init(*in_features, *out_features, *bias, rng))
            }
            LayerSpec::QLinear { q_in, q_out, bias } => Layer::QLinear(QLinearLayer::init(*q_in, *q_out, *bias, rng)),
            LayerSpec::Residual { body } => Layer::Residual(body.iter().map(|s| Layer::init_from_spec(s, rng)).collect()),
            other => Layer::from_spec(other),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::QConv(_) => "qconv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Pool { kind: PoolKind::Max, .. } => "maxpool",
            Layer::Pool { kind: PoolKind::Avg, .. } => "avgpool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
            Layer::QLinear(_) => "qlinear",
            Layer::Residual(_) => "residual",
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Vec<T>>) {
        match self {
            Layer::Conv(l) => {
                out.push(&l.weight);
                out.extend(l.bias.as_ref());
            }
            Layer::QConv(l) => {
                out.push(&l.weight);
                out.extend(l.bias.as_ref());
            }
            Layer::Linear(l) => {
                out.push(&l.weight);
                out.extend(l.bias.as_ref());
            }
            Layer::QLinear(l) => {
                out.push(&l.weight);
                out.extend(l.bias.as_ref());
            }
            Layer::BatchNorm(l) => {
                out.push(&l.gamma);
                out.push(&l.beta);
            }
            Layer::Residual(body) => body.iter().for_each(|l| l.collect_params(out)),
            _ => {}
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        self.collect_params_mut(&mut out);
        out
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        match self {
            Layer::Conv(l) => {
                out.push(&mut l.weight);
                out.extend(l.bias.as_mut());
            }
            Layer::QConv(l) => {
                out.push(&mut l.weight);
                out.extend(l.bias.as_mut());
            }
            Layer::Linear(l) => {
                out.push(&mut l.weight);
                out.extend(l.bias.as_mut());
            }
            Layer::QLinear(l) => {
                out.push(&mut l.weight);
                out.extend(l.bias.as_mut());
            }
            Layer::BatchNorm(l) => {
                out.push(&mut l.gamma);
                out.push(&mut l.beta);
            }
            Layer::Residual(body) => body.iter_mut().for_each(|l| l.collect_params_mut(out)),
            _ => {}
        }
    }

    /// Every persisted tensor (parameters plus batch-norm running statistics).
    pub fn state(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        self.collect_state(&mut out);
        out
    }

    fn collect_state<'a>(&'a self, out: &mut Vec<&'a Vec<T>>) {
        match self {
            Layer::BatchNorm(l) => {
                out.extend([&l.gamma, &l.beta, &l.running_mean, &l.running_var]);
            }
            Layer::Residual(body) => body.iter().for_each(|l| l.collect_state(out)),
            other => other.collect_params(out),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        self.collect_state_mut(&mut out);
        out
    }

    fn collect_state_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        match self {
            Layer::BatchNorm(l) => {
                out.push(&mut l.gamma);
                out.push(&mut l.beta);
                out.push(&mut l.running_mean);
                out.push(&mut l.running_var);
            }
            Layer::Residual(body) => body.iter_mut().for_each(|l| l.collect_state_mut(out)),
            other => other.collect_params_mut(out),
        }
    }

    /// Learned real scalars, including biases and batch-norm affine terms.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        use ActShape::*;
        let bad = |what: &str| Error::shape(format!("{} cannot consume {what}", self.name()));
        match (self, input) {
            (Layer::Conv(l), Spatial { c, h, w }) => {
                if c != l.c_in {
                    return Err(Error::shape(format!("conv expects {} channels, got {c}", l.c_in)));
                }
                let (ho, wo) = l.geom.output_size(h, w)?;
                Ok(Spatial { c: l.c_out, h: ho, w: wo })
            }
            (Layer::QConv(l), Spatial { c, h, w }) => {
                if c != 4 * l.q_in {
                    return Err(Error::shape(format!(
                        "qconv expects {} real channels, got {c}",
                        4 * l.q_in
                    )));
                }
                let (ho, wo) = l.geom.output_size(h, w)?;
                Ok(Spatial { c: 4 * l.q_out, h: ho, w: wo })
            }
            (Layer::BatchNorm(l), s @ Spatial { c, .. }) => {
                if c != l.channels {
                    return Err(Error::shape(format!("batchnorm has {} channels, input {c}", l.channels)));
                }
                Ok(s)
            }
            (Layer::Relu, s) => Ok(s),
            (Layer::Pool { window, stride, .. }, Spatial { c, h, w }) => {
                if *window == 0 || *stride == 0 || *window > h || *window > w {
                    return Err(Error::shape(format!("pool window {window} does not fit {h}x{w}")));
                }
                Ok(Spatial { c, h: (h - window) / stride + 1, w: (w - window) / stride + 1 })
            }
            (Layer::GlobalAvgPool, Spatial { c, .. }) => Ok(Flat { features: c }),
            (Layer::Flatten, Spatial { c, h, w }) => Ok(Flat { features: c * h * w }),
            (Layer::Flatten, f @ Flat { .. }) => Ok(f),
            (Layer::Linear(l), Flat { features }) => {
                if features != l.in_features {
                    return Err(Error::shape(format!("linear expects {} features, got {features}", l.in_features)));
                }
                Ok(Flat { features: l.out_features })
            }
            (Layer::QLinear(l), Flat { features }) => {
                if features != 4 * l.q_in {
                    return Err(Error::shape(format!("qlinear expects {} features, got {features}", 4 * l.q_in)));
                }
                Ok(Flat { features: 4 * l.q_out })
            }
            (Layer::Residual(body), s) => {
                let mut cur = s;
                for l in body {
                    cur = l.output_shape(cur)?;
                }
                if cur != s {
                    return Err(Error::shape(format!("residual body maps {s:?} to {cur:?}")));
                }
                Ok(s)
            }
            (_, Spatial { .. }) => Err(bad("a spatial map")),
            (_, Flat { .. }) => Err(bad("flat features")),
        }
    }

    pub fn forward(&self, x: Act<T>, mode: Mode) -> Result<(Act<T>, Saved<T>)> {
        Ok(match self {
            Layer::Conv(l) => {
                let y = l.forward(x.spatial()?)?;
                (Act::Spatial(y), Saved::Input(x))
            }
            Layer::QConv(l) => {
                let y = l.forward(x.spatial()?)?;
                (Act::Spatial(y), Saved::Input(x))
            }
            Layer::BatchNorm(l) => {
                let (y, cache) = l.forward(x.spatial()?, mode)?;
                (Act::Spatial(y), Saved::BatchNorm(cache))
            }
            Layer::Relu => {
                let mut y = x;
                relu_in_place(y.values_mut());
                (y.clone(), Saved::Output(y))
            }
            Layer::Pool { kind, window, stride } => {
                let t = x.into_spatial()?;
                let (y, argmax) = pool_forward(&t, *kind, *window, *stride)?;
                (Act::Spatial(y), Saved::Pool { in_dims: t.dims(), argmax })
            }
            Layer::GlobalAvgPool => {
                let t = x.into_spatial()?;
                (Act::Flat(global_avg_forward(&t)), Saved::Reshape { in_dims: t.dims() })
            }
            Layer::Flatten => match x {
                Act::Spatial(t) => {
                    let dims = t.dims();
                    let y = Matrix::from_vec(t.n, t.c * t.h * t.w, t.data)?;
                    (Act::Flat(y), Saved::Reshape { in_dims: dims })
                }
                flat @ Act::Flat(_) => (flat, Saved::None),
            },
            Layer::Linear(l) => {
                let y = l.forward(x.flat()?)?;
                (Act::Flat(y), Saved::Input(x))
            }
            Layer::QLinear(l) => {
                let y = l.forward(x.flat()?)?;
                (Act::Flat(y), Saved::Input(x))
            }
            Layer::Residual(body) => {
                let mut cur = x.clone();
                let mut saved = Vec::with_capacity(body.len());
                for l in body {
                    let (y, s) = l.forward(cur, mode)?;
                    saved.push(s);
                    cur = y;
                }
                if cur.values().len() != x.values().len() {
                    return Err(Error::shape("residual body changed the activation shape"));
                }
                let mut sum = cur;
                for (s, &v) in sum.values_mut().iter_mut().zip(x.values()) {
                    *s += v;
                }
                relu_in_place(sum.values_mut());
                (sum.clone(), Saved::Residual { body: saved, output: sum })
            }
        })
    }

    /// Returns the input gradient and this layer's parameter gradients (in
    /// [`Layer::params`] order).
    pub fn backward(&self, saved: &Saved<T>, dy: Act<T>) -> Result<(Act<T>, Vec<Vec<T>>)> {
        let mismatch = || Error::invalid(format!("saved forward state does not belong to a {} layer", self.name()));
        Ok(match (self, saved) {
            (Layer::Conv(l), Saved::Input(x)) => {
                let (dx, dw, db) = l.backward(x.spatial()?, dy.spatial()?)?;
                (Act::Spatial(dx), std::iter::once(dw).chain(db).collect())
            }
            (Layer::QConv(l), Saved::Input(x)) => {
                let (dx, dw, db) = l.backward(x.spatial()?, dy.spatial()?)?;
                (Act::Spatial(dx), std::iter::once(dw).chain(db).collect())
            }
            (Layer::BatchNorm(l), Saved::BatchNorm(cache)) => {
                let (dx, dg, db) = l.backward(cache, dy.spatial()?)?;
                (Act::Spatial(dx), vec![dg, db])
            }
            (Layer::Relu, Saved::Output(y)) => {
                let mut g = dy;
                relu_backward(y.values(), g.values_mut());
                (g, Vec::new())
            }
            (Layer::Pool { kind, window, stride }, Saved::Pool { in_dims, argmax }) => {
                let dx = pool_backward(*in_dims, *kind, *window, *stride, argmax, dy.spatial()?);
                (Act::Spatial(dx), Vec::new())
            }
            (Layer::GlobalAvgPool, Saved::Reshape { in_dims }) => {
                (Act::Spatial(global_avg_backward(*in_dims, dy.flat()?)), Vec::new())
            }
            (Layer::Flatten, Saved::Reshape { in_dims }) => {
                let (n, c, h, w) = *in_dims;
                let m = dy.into_flat()?;
                (Act::Spatial(Tensor4::from_vec(n, c, h, w, m.data)?), Vec::new())
            }
            (Layer::Flatten, Saved::None) => (dy, Vec::new()),
            (Layer::Linear(l), Saved::Input(x)) => {
                let (dx, dw, db) = l.backward(x.flat()?, dy.flat()?)?;
                (Act::Flat(dx), std::iter::once(dw).chain(db).collect())
            }
            (Layer::QLinear(l), Saved::Input(x)) => {
                let (dx, dw, db) = l.backward(x.flat()?, dy.flat()?)?;
                (Act::Flat(dx), std::iter::once(dw).chain(db).collect())
            }
            (Layer::Residual(body), Saved::Residual { body: saved, output }) => {
                let mut dsum = dy;
                relu_backward(output.values(), dsum.values_mut());
                let mut g = dsum.clone();
                let mut grads: Vec<Vec<Vec<T>>> = Vec::with_capacity(body.len());
                for (l, s) in body.iter().zip(saved).rev() {
                    let (dx, pg) = l.backward(s, g)?;
                    grads.push(pg);
                    g = dx;
                }
                for (a, &b) in g.values_mut().iter_mut().zip(dsum.values()) {
                    *a += b;
                }
                (g, grads.into_iter().rev().flatten().collect())
            }
            _ => return Err(mismatch()),
        })
    }
}

/// An ordered layer list plus the metadata needed to run and persist it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    pub arch: String,
    pub input: InputSpec,
    pub classes: usize,
    pub task: Task,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(arch: impl Into<String>, input: InputSpec, classes: usize, task: Task, layers: Vec<Layer<T>>) -> Self {
        Self { arch: arch.into(), input, classes, task, layers }
    }

    pub fn input_shape(&self) -> ActShape {
        ActShape::Spatial { c: self.input.channels, h: self.input.height, w: self.input.width }
    }

    /// Output shape of every top-level layer.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let mut cur = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = l
                .output_shape(cur)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", l.name())))?;
            out.push(cur);
        }
        Ok(out)
    }

    /// Checks that layers chain and the model ends in `classes` logits.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match shapes.last() {
            None => Ok(()),
            Some(ActShape::Flat { features }) if *features == self.classes => Ok(()),
            Some(s) => Err(Error::shape(format!(
                "model output {s:?} does not match {} classes",
                self.classes
            ))),
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn state(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(Layer::state).collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(Layer::state_mut).collect()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn from_specs(arch: impl Into<String>, input: InputSpec, classes: usize, task: Task, specs: &[LayerSpec]) -> Self {
        Self::new(arch, input, classes, task, specs.iter().map(Layer::from_spec).collect())
    }

    /// Same architecture with every parameter freshly initialized.
    pub fn reinitialized<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let layers = self.specs().iter().map(|s| Layer::init_from_spec(s, rng)).collect();
        Self::new(self.arch.clone(), self.input, self.classes, self.task, layers)
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let mut out = ModelGraph::<U>::from_specs(self.arch.clone(), self.input, self.classes, self.task, &self.specs());
        for (dst, src) in out.state_mut().into_iter().zip(self.state()) {
            *dst = src.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect();
        }
        out
    }
}

/// Converts a real-valued model into its quaternion counterpart: every conv
/// layer `(C_in, C_out)` becomes a quaternion conv `(C_in/4, C_out/4)`, hidden
/// linear layers become quaternion linear layers, and the final linear
/// classifier stays real. Weights are freshly initialized.
pub fn convert_architecture<T: Scalar, R: Rng + ?Sized>(real: &ModelGraph<T>, rng: &mut R) -> Result<ModelGraph<T>> {
    let head = real.layers.iter().rposition(|l| matches!(l, Layer::Linear(_)));
    let mut layers = Vec::with_capacity(real.layers.len());
    for (idx, layer) in real.layers.iter().enumerate() {
        let keep_real = Some(idx) == head;
        layers.push(convert_layer(layer, idx, keep_real, rng)?);
    }
    if real.input.channels % 4 != 0 && !layers.is_empty() {
        return Err(Error::Conversion {
            layer: 0,
            reason: format!("input has {} channels, not divisible by 4", real.input.channels),
        });
    }
    let arch = if real.arch.is_empty() { String::new() } else { format!("q{}", real.arch) };
    Ok(ModelGraph::new(arch, real.input, real.classes, real.task, layers))
}

fn convert_layer<T: Scalar, R: Rng + ?Sized>(layer: &Layer<T>, idx: usize, keep_real: bool, rng: &mut R) -> Result<Layer<T>> {
    let div4 = |what: &str, n: usize| {
        if n % 4 == 0 {
            Ok(n / 4)
        } else {
            Err(Error::Conversion { layer: idx, reason: format!("{what} = {n} is not divisible by 4") })
        }
    };
    Ok(match layer {
        Layer::Conv(l) => {
            let (qi, qo) = (div4("C_in", l.c_in)?, div4("C_out", l.c_out)?);
            Layer::QConv(QConvLayer::init(qi, qo, l.geom, l.bias.is_some(), rng))
        }
        Layer::Linear(l) if keep_real => Layer::Linear(LinearLayer::init(l.in_features, l.out_features, l.bias.is_some(), rng)),
        Layer::Linear(l) => {
            let (qi, qo) = (div4("in_features", l.in_features)?, div4("out_features", l.out_features)?);
            Layer::QLinear(QLinearLayer::init(qi, qo, l.bias.is_some(), rng))
        }
        Layer::BatchNorm(l) => {
            div4("channels", l.channels)?;
            Layer::BatchNorm(BatchNormLayer::new(l.channels))
        }
        Layer::Residual(body) => Layer::Residual(
            body.iter()
                .map(|l| convert_layer(l, idx, false, rng))
                .collect::<Result<_>>()?,
        ),
        other => Layer::init_from_spec(&other.spec(), rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn real_model(c_in: usize) -> ModelGraph<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![
            Layer::Conv(RealConvLayer::init(c_in, 8, ConvGeometry::square(3, 1, 1), false, &mut rng)),
            Layer::BatchNorm(BatchNormLayer::new(8)),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Linear(LinearLayer::init(8, 8, true, &mut rng)),
            Layer::Relu,
            Layer::Linear(LinearLayer::init(8, 3, true, &mut rng)),
        ];
        ModelGraph::new("cnn", InputSpec { channels: c_in, height: 6, width: 6 }, 3, Task::Single, layers)
    }

    #[test]
    fn conversion_groups_channels_by_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = real_model(4);
        let q = convert_architecture(&real, &mut rng).unwrap();
        match &q.layers[0] {
            Layer::QConv(l) => {
                assert_eq!((l.q_in, l.q_out, l.geom.kh, l.geom.kw), (1, 2, 3, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(q.layers[4], Layer::QLinear(_)));
        assert!(matches!(q.layers[6], Layer::Linear(_)));
        assert_eq!(q.shapes().unwrap(), real.shapes().unwrap());
        q.validate().unwrap();
        assert_eq!(q.arch, "qcnn");
    }

    #[test]
    fn conversion_errors_name_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        match convert_architecture(&real_model(3), &mut rng) {
            Err(Error::Conversion { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_model_converts_to_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = ModelGraph::<f32>::new("", InputSpec { channels: 4, height: 1, width: 1 }, 0, Task::Single, vec![]);
        let q = convert_architecture(&empty, &mut rng).unwrap();
        assert!(q.layers.is_empty());
    }

    #[test]
    fn shape_validation_catches_mismatch() {
        let mut m = real_model(4);
        m.layers[6] = Layer::Linear(LinearLayer::zeros(7, 3, true));
        assert!(m.validate().is_err());
    }

    #[test]
    fn cast_round_trip_preserves_values() {
        let m = real_model(4);
        let back: ModelGraph<f32> = m.cast::<f64>().cast();
        assert_eq!(back, m);
    }
}
