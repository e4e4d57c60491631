//! Knowledge distillation from a frozen teacher, and the prune-then-distill
//! variant.

use crate::autodiff::{
    binary_cross_entropy_with_logits, cross_entropy, kl_divergence, predict, soft_cross_entropy, softmax_rows, Logits, Loss,
};
use crate::error::{Error, Result};
use crate::nn::{ModelGraph, Task};
use crate::pruning::{apply_prune, PrunePlan};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::train::{fit, Dataset, Objective, TrainConfig, TrainLog};
use rand::Rng;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdConfig {
    /// Weight of the supervised term; `1 − alpha` weighs the KL term.
    pub alpha: f64,
    pub temperature: f64,
    /// Multiply the KL term by `T²`. Off by default.
    pub t2_scaling: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, temperature: DEFAULT_TEMPERATURE, t2_scaling: false }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    fn kl_weight(&self) -> f64 {
        let s = if self.t2_scaling { self.temperature * self.temperature } else { 1.0 };
        (1.0 - self.alpha) * s
    }
}

/// `softmax(z / T)` per row.
pub fn softened_softmax<T: Scalar>(z: &Matrix<T>, temperature: f64) -> Result<Matrix<T>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let t = T::from_f64_lossy(temperature);
    let mut scaled = z.clone();
    scaled.data.iter_mut().for_each(|v| *v /= t);
    Ok(softmax_rows(&scaled))
}

/// The combined loss with its two components.
#[derive(Debug, Clone)]
pub struct KdLoss<T> {
    pub total: Loss<T>,
    /// Supervised term before weighting.
    pub supervised: f64,
    /// `KL(teacher ‖ student)` of the softened distributions, before weighting.
    pub kl: f64,
}

fn supervised<T: Scalar>(task: Task, z: &Logits<T>, y: &Matrix<T>) -> Result<Loss<T>> {
    match task {
        Task::Single if y.data.iter().all(|&v| v == T::zero() || v == T::one()) => cross_entropy(z, y),
        Task::Single => soft_cross_entropy(z, y),
        Task::Multi => binary_cross_entropy_with_logits(z, y),
    }
}

/// `α·L_sup(y, z_s) + (1 − α)·KL(softmax(z_t/T) ‖ softmax(z_s/T))`, both terms
/// averaged over the batch. `L_sup` is the task's supervised loss
/// (cross-entropy for single-label data).
pub fn kd_total_loss<T: Scalar>(
    student: &Logits<T>,
    teacher: &Matrix<T>,
    y: &Matrix<T>,
    cfg: &KdConfig,
    task: Task,
) -> Result<KdLoss<T>> {
    cfg.validate()?;
    let zs = &student.values;
    if (zs.rows, zs.cols) != (teacher.rows, teacher.cols) {
        return Err(Error::shape(format!(
            "student logits are {}x{}, teacher {}x{}",
            zs.rows, zs.cols, teacher.rows, teacher.cols
        )));
    }
    let sup = supervised(task, student, y)?;
    let ps = softened_softmax(zs, cfg.temperature)?;
    let pt = softened_softmax(teacher, cfg.temperature)?;
    let kl = kl_divergence(&pt, &ps)?;
    // d KL / d z_s = (p_s − p_t) / (T·N).
    let scale = T::one() / T::from_f64_lossy(cfg.temperature * zs.rows as f64);
    let kl_grad: Vec<T> = ps.data.iter().zip(&pt.data).map(|(&s, &t)| (s - t) * scale).collect();
    let kl_loss = Loss::custom(student, kl, Matrix::from_vec(zs.rows, zs.cols, kl_grad)?)?;
    let total = Loss::weighted_sum(&sup, T::from_f64_lossy(cfg.alpha), &kl_loss, T::from_f64_lossy(cfg.kl_weight()))?;
    Ok(KdLoss { supervised: sup.value.to_f64_lossy(), kl: kl.to_f64_lossy(), total })
}

fn check_pair(teacher: &ModelGraph<f32>, student: &ModelGraph<f32>) -> Result<()> {
    if teacher.classes != student.classes {
        return Err(Error::invalid(format!(
            "teacher predicts {} classes, student {}",
            teacher.classes, student.classes
        )));
    }
    if teacher.input != student.input {
        return Err(Error::invalid("teacher and student expect different inputs"));
    }
    Ok(())
}

/// Trains `student` against the frozen `teacher`. The teacher runs once per
/// iteration, in eval mode, on the same (possibly mixed) batch. The log
/// records the `ce` and `kl` terms per iteration.
pub fn distill_train(
    teacher: &ModelGraph<f32>,
    student: &mut ModelGraph<f32>,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    kd: &KdConfig,
) -> Result<TrainLog> {
    check_pair(teacher, student)?;
    kd.validate()?;
    let task = data.task;
    fit(student, data, cfg, val, |x, logits, y| {
        let zt = predict(teacher, x)?;
        let l = kd_total_loss(logits, &zt, y, kd, task)?;
        Ok(Objective { loss: l.total, terms: vec![("ce", l.supervised), ("kl", l.kl)] })
    })
}

/// A freshly initialized model with the pruned architecture (weights are not
/// copied from the teacher).
pub fn make_student_from_plan<T: Scalar, R: Rng + ?Sized>(teacher: &ModelGraph<T>, plan: &PrunePlan, rng: &mut R) -> Result<ModelGraph<T>> {
    Ok(apply_prune(teacher, plan)?.reinitialized(rng))
}

/// Prune_KD: the pruned model keeps the teacher's surviving weights and is
/// fine-tuned with the distillation loss, the unpruned model as teacher.
pub fn prune_kd(
    teacher: &ModelGraph<f32>,
    plan: &PrunePlan,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    kd: &KdConfig,
) -> Result<(ModelGraph<f32>, TrainLog)> {
    let mut student = apply_prune(teacher, plan)?;
    let log = distill_train(teacher, &mut student, data, Some(val.unwrap_or(data)), cfg, kd)?;
    Ok((student, log))
}
