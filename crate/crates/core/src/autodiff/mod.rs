//! Reverse-mode differentiation over model forward passes.
//!
//! Every layer records what it needs on a [`Tape`] during [`forward`];
//! [`backward`] walks the tape in reverse and produces one gradient tensor
//! per trainable parameter, in [`ModelGraph::params`] order.

mod loss;
mod optim;

pub use loss::{
    binary_cross_entropy_with_logits, cross_entropy, kl_divergence, log_softmax_rows, mixup, sample_mixup_lambda,
    soft_cross_entropy, softmax_rows, Loss,
};
pub use optim::{OptimState, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::error::{Error, Result};
use crate::nn::{Mode, ModelGraph, Saved};
use crate::nn::Layer;
use crate::scalar::Scalar;
use crate::tensor::{Act, Matrix, Tensor4};
use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static FORWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of model forward passes run on this thread so far.
pub fn forward_pass_count() -> u64 {
    FORWARD_PASSES.with(Cell::get)
}

fn count_forward() {
    FORWARD_PASSES.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TapeId(u64);

/// Model outputs, tagged with the tape that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub values: Matrix<T>,
    tape: Option<TapeId>,
}

impl<T: Scalar> Logits<T> {
    /// Logits not attached to any tape (for loss evaluation only).
    pub fn detached(values: Matrix<T>) -> Self {
        Self { values, tape: None }
    }

    pub fn tape_id(&self) -> Option<TapeId> {
        self.tape
    }
}

/// Forward record of one pass.
#[derive(Debug)]
pub struct Tape<T> {
    id: TapeId,
    mode: Mode,
    saved: Vec<Saved<T>>,
    batch: usize,
    classes: usize,
    param_shapes: Vec<usize>,
}

impl<T: Scalar> Tape<T> {
    pub fn id(&self) -> TapeId {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Folds the batch statistics observed by train-mode batch norm into the
    /// model's running estimates. No-op for eval-mode tapes.
    pub fn update_running_stats(&self, model: &mut ModelGraph<T>) -> Result<()> {
        if self.mode != Mode::Train {
            return Ok(());
        }
        if model.layers.len() != self.saved.len() {
            return Err(Error::invalid("tape was recorded on a different model"));
        }
        fn walk<T: Scalar>(layers: &mut [Layer<T>], saved: &[Saved<T>]) {
            for (l, s) in layers.iter_mut().zip(saved) {
                match (l, s) {
                    (Layer::BatchNorm(bn), Saved::BatchNorm(cache)) => {
                        let count = cache.xhat.n * cache.xhat.plane_len();
                        bn.update_running(&cache.batch_mean, &cache.batch_var, count);
                    }
                    (Layer::Residual(body), Saved::Residual { body: sb, .. }) => walk(body, sb),
                    _ => {}
                }
            }
        }
        walk(&mut model.layers, &self.saved);
        Ok(())
    }
}

/// One gradient tensor per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &ModelGraph<T>) -> Self {
        Self { tensors: model.params().iter().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    /// Gradient of parameter tensor `handle` (index into `ModelGraph::params`).
    pub fn get(&self, handle: usize) -> &[T] {
        &self.tensors[handle]
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Runs the model on a batch and records a tape.
///
/// The model is not mutated; in train mode call
/// [`Tape::update_running_stats`] to advance batch-norm statistics.
pub fn forward<T: Scalar>(model: &ModelGraph<T>, batch: &Tensor4<T>, mode: Mode) -> Result<(Logits<T>, Tape<T>)> {
    let spec = model.input;
    if (batch.c, batch.h, batch.w) != (spec.channels, spec.height, spec.width) {
        return Err(Error::shape(format!(
            "batch items are {}x{}x{}, model expects {}x{}x{}",
            batch.c, batch.h, batch.w, spec.channels, spec.height, spec.width
        )));
    }
    count_forward();
    let mut cur = Act::Spatial(batch.clone());
    let mut saved = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        let (y, s) = l
            .forward(cur, mode)
            .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", l.name())))?;
        saved.push(s);
        cur = y;
    }
    let values = match cur {
        Act::Flat(m) if m.cols == model.classes => m,
        other => {
            return Err(Error::shape(format!(
                "model produced {} values per item, expected {} logits",
                other.values().len() / batch.n.max(1),
                model.classes
            )))
        }
    };
    let id = TapeId(NEXT_TAPE.fetch_add(1, Ordering::Relaxed));
    let tape = Tape {
        id,
        mode,
        saved,
        batch: batch.n,
        classes: model.classes,
        param_shapes: model.params().iter().map(|p| p.len()).collect(),
    };
    Ok((Logits { values, tape: Some(id) }, tape))
}

/// Inference without recording a tape.
pub fn predict<T: Scalar>(model: &ModelGraph<T>, batch: &Tensor4<T>) -> Result<Matrix<T>> {
    Ok(forward(model, batch, Mode::Eval)?.0.values)
}

/// Gradients of `loss` with respect to every trainable parameter of the model
/// the tape was recorded on.
pub fn backward<T: Scalar>(model: &ModelGraph<T>, tape: &Tape<T>, loss: &Loss<T>) -> Result<Gradients<T>> {
    if loss.tape_id() != Some(tape.id) {
        return Err(Error::invalid("loss was not computed from this tape's logits"));
    }
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if shapes != tape.param_shapes || model.layers.len() != tape.saved.len() {
        return Err(Error::invalid("tape was recorded on a different model"));
    }
    if loss.grad.rows != tape.batch || loss.grad.cols != tape.classes {
        return Err(Error::shape("loss gradient does not match the logits"));
    }
    let mut g = Act::Flat(loss.grad.clone());
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for (l, s) in model.layers.iter().zip(&tape.saved).rev() {
        let (dx, pg) = l.backward(s, g)?;
        per_layer.push(pg);
        g = dx;
    }
    let tensors: Vec<Vec<T>> = per_layer.into_iter().rev().flatten().collect();
    debug_assert_eq!(tensors.len(), shapes.len());
    Ok(Gradients { tensors })
}
