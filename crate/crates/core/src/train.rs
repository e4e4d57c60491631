//! Datasets, deterministic mini-batching and the generic training loop used
//! by plain training, fine-tuning and distillation.

use crate::autodiff::{
    backward, binary_cross_entropy_with_logits, cross_entropy, forward, forward_pass_count, mixup, predict,
    sample_mixup_lambda, soft_cross_entropy, Logits, Loss, OptimState, OptimizerKind,
};
use crate::error::{Error, Result};
use crate::metrics::{correct_count, mean_average_precision, Metric};
use crate::nn::{Mode, ModelGraph, Task};
use crate::tensor::{Matrix, Tensor4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Inputs with one target row per example: one-hot for single-label tasks,
/// multi-hot for multi-label tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor4<f32>,
    pub targets: Matrix<f32>,
    pub task: Task,
}

impl Dataset {
    pub fn new(inputs: Tensor4<f32>, targets: Matrix<f32>, task: Task) -> Result<Self> {
        if inputs.n != targets.rows {
            return Err(Error::shape(format!("{} inputs but {} target rows", inputs.n, targets.rows)));
        }
        if targets.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("targets must be 0/1 indicators"));
        }
        if task == Task::Single {
            for r in 0..targets.rows {
                if targets.row(r).iter().filter(|&&v| v == 1.0).count() != 1 {
                    return Err(Error::invalid(format!("example {r} does not have exactly one label")));
                }
            }
        }
        Ok(Self { inputs, targets, task })
    }

    /// Single-label dataset from class indices.
    pub fn from_labels(inputs: Tensor4<f32>, labels: &[usize], classes: usize) -> Result<Self> {
        let mut targets = Matrix::zeros(labels.len(), classes);
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
            }
            targets.row_mut(r)[l] = 1.0;
        }
        Self::new(inputs, targets, Task::Single)
    }

    pub fn len(&self) -> usize {
        self.inputs.n
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.n == 0
    }

    pub fn classes(&self) -> usize {
        self.targets.cols
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut targets = Matrix::zeros(indices.len(), self.targets.cols);
        for (r, &i) in indices.iter().enumerate() {
            targets.row_mut(r).copy_from_slice(self.targets.row(i));
        }
        Self { inputs: self.inputs.gather(indices), targets, task: self.task }
    }

    /// Class index of every example (arg-max of its target row).
    pub fn labels(&self) -> Vec<usize> {
        (0..self.targets.rows).map(|r| crate::metrics::argmax(self.targets.row(r))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub mixup: bool,
    /// Evaluate on the validation set every this many iterations (0: only
    /// before and after training).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            mixup: false,
            eval_every: 0,
        }
    }
}

/// Endless stream of mini-batch indices: each epoch is a fresh shuffle, and a
/// batch never spans two epochs (the remainder of an epoch is dropped unless
/// the dataset is smaller than one batch).
#[derive(Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize) -> Result<Self> {
        if len == 0 || batch == 0 {
            return Err(Error::invalid("batching needs a non-empty dataset and batch size"));
        }
        Ok(Self { order: (0..len).collect(), pos: len, batch: batch.min(len) })
    }

    pub fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// A loss for one mini-batch plus named components for logging.
pub struct Objective {
    pub loss: Loss<f32>,
    pub terms: Vec<(&'static str, f64)>,
}

/// The supervised loss of the task: softmax cross-entropy (soft targets
/// allowed, for mixup) or per-class binary cross-entropy.
pub fn supervised_loss(task: Task, logits: &Logits<f32>, targets: &Matrix<f32>) -> Result<Loss<f32>> {
    match task {
        Task::Single if targets.data.iter().all(|&v| v == 0.0 || v == 1.0) => cross_entropy(logits, targets),
        Task::Single => soft_cross_entropy(logits, targets),
        Task::Multi => binary_cross_entropy_with_logits(logits, targets),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub terms: Vec<(&'static str, f64)>,
    /// Model forward passes (student and teacher) run during the iteration.
    pub forward_passes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<IterationRecord>,
    pub evals: Vec<EvalRecord>,
    /// Iteration whose parameters were kept (best validation metric), when a
    /// validation set was given.
    pub best_iteration: Option<usize>,
}

impl TrainLog {
    pub fn mean_seconds_per_iteration(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().map(|r| r.seconds).sum::<f64>() / self.iterations.len() as f64
    }

    /// CSV with one row per iteration: iteration, loss, each term, metric
    /// (blank when not evaluated at that iteration).
    pub fn to_csv(&self) -> Result<String> {
        let term_names: Vec<&str> = self.iterations.first().map(|r| r.terms.iter().map(|t| t.0).collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iteration", "loss"];
        header.extend(&term_names);
        header.push("metric");
        w.write_record(&header).map_err(csv_err)?;
        let metric_at = |it: usize| self.evals.iter().find(|e| e.iteration == it).map(|e| e.metric.to_string());
        if let Some(e) = self.evals.iter().find(|e| e.iteration == 0) {
            let mut row = vec!["0".to_string(), String::new()];
            row.extend(term_names.iter().map(|_| String::new()));
            row.push(e.metric.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        for r in &self.iterations {
            let mut row = vec![r.iteration.to_string(), r.loss.to_string()];
            row.extend(r.terms.iter().map(|t| t.1.to_string()));
            row.push(metric_at(r.iteration).unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Task metric on a dataset: accuracy for single-label, mAP for multi-label.
pub fn evaluate(model: &ModelGraph<f32>, data: &Dataset) -> Result<Metric> {
    let logits = predict_all(model, &data.inputs)?;
    match data.task {
        Task::Single => {
            let correct = correct_count(&logits, &data.targets);
            let acc = correct as f64 / data.len() as f64;
            Ok(Metric::Accuracy { folds: vec![acc], mean: acc })
        }
        Task::Multi => Ok(Metric::Map(mean_average_precision(&logits, &data.targets)?)),
    }
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode logits for every item, computed in chunks.
pub fn predict_all(model: &ModelGraph<f32>, inputs: &Tensor4<f32>) -> Result<Matrix<f32>> {
    let mut out = Matrix::zeros(inputs.n, model.classes);
    let mut start = 0;
    while start < inputs.n {
        let end = (start + EVAL_CHUNK).min(inputs.n);
        let z = predict(model, &inputs.slice_batch(start, end))?;
        out.data[start * model.classes..end * model.classes].copy_from_slice(&z.data);
        start = end;
    }
    Ok(out)
}

/// Trains `model` in place with the default supervised objective.
pub fn train(model: &mut ModelGraph<f32>, data: &Dataset, cfg: &TrainConfig, val: Option<&Dataset>) -> Result<TrainLog> {
    let task = data.task;
    fit(model, data, cfg, val, |_, logits, targets| {
        let loss = supervised_loss(task, logits, targets)?;
        let v = f64::from(loss.value);
        Ok(Objective { loss, terms: vec![("ce", v)] })
    })
}

/// Generic training loop.
///
/// `objective` receives the batch inputs, the student logits and the batch
/// targets. With a validation set the model is evaluated before training,
/// every `eval_every` iterations and at the end, and the parameters with the
/// best metric are kept (earliest wins ties).
pub fn fit<F>(model: &mut ModelGraph<f32>, data: &Dataset, cfg: &TrainConfig, val: Option<&Dataset>, mut objective: F) -> Result<TrainLog>
where
    F: FnMut(&Tensor4<f32>, &Logits<f32>, &Matrix<f32>) -> Result<Objective>,
{
    if data.classes() != model.classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model {}",
            data.classes(),
            model.classes
        )));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {} is not a finite non-negative number", cfg.lr)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelGraph<f32>)> = None;
    let mut consider = |model: &ModelGraph<f32>, it: usize, log: &mut TrainLog| -> Result<()> {
        if let Some(v) = val {
            let m = evaluate(model, v)?.value();
            log.evals.push(EvalRecord { iteration: it, metric: m });
            if best.as_ref().is_none_or(|(b, _)| m > *b) {
                best = Some((m, model.clone()));
                log.best_iteration = Some(it);
            }
        }
        Ok(())
    };
    consider(model, 0, &mut log)?;
    if cfg.iterations == 0 {
        return Ok(log);
    }
    let mut opt = OptimState::new(cfg.optimizer, cfg.lr, model);
    let mut sampler = BatchSampler::new(data.len(), cfg.batch_size)?;
    for it in 1..=cfg.iterations {
        let start = Instant::now();
        let passes = forward_pass_count();
        let idx = sampler.next_batch(&mut rng);
        let mut x = data.inputs.gather(&idx);
        let mut y = data.subset(&idx).targets;
        if cfg.mixup {
            let lambda = sample_mixup_lambda(&mut rng) as f32;
            let mut perm: Vec<usize> = (0..idx.len()).collect();
            perm.shuffle(&mut rng);
            let xb = x.gather(&perm);
            let mut yb = Matrix::zeros(y.rows, y.cols);
            for (r, &p) in perm.iter().enumerate() {
                yb.row_mut(r).copy_from_slice(y.row(p));
            }
            (x, y) = mixup(&x, &xb, &y, &yb, lambda)?;
        }
        let (logits, tape) = forward(model, &x, Mode::Train)?;
        let obj = objective(&x, &logits, &y)?;
        let value = f64::from(obj.loss.value);
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it, loss: value });
        }
        let grads = backward(model, &tape, &obj.loss)?;
        opt.step(model, &grads)?;
        tape.update_running_stats(model)?;
        log.iterations.push(IterationRecord {
            iteration: it,
            loss: value,
            terms: obj.terms,
            forward_passes: forward_pass_count() - passes,
            seconds: start.elapsed().as_secs_f64(),
        });
        if it == cfg.iterations || (cfg.eval_every > 0 && it % cfg.eval_every == 0) {
            consider(model, it, &mut log)?;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InputSpec, Layer, LinearLayer};

    fn toy() -> (ModelGraph<f32>, Dataset) {
        // Two separable classes in two features.
        let xs: Vec<f32> = (0..20).flat_map(|i| if i % 2 == 0 { [1.0, 0.2] } else { [-1.0, -0.1] }).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let data = Dataset::from_labels(Tensor4::from_vec(20, 2, 1, 1, xs).unwrap(), &labels, 2).unwrap();
        let model = ModelGraph::new(
            "toy",
            InputSpec { channels: 2, height: 1, width: 1 },
            2,
            Task::Single,
            vec![Layer::Flatten, Layer::Linear(LinearLayer::zeros(2, 2, true))],
        );
        (model, data)
    }

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(&mut rng)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let (mut model, data) = toy();
        let before = model.clone();
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        train(&mut model, &data, &cfg, Some(&data)).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn training_separates_toy_classes() {
        let (mut model, data) = toy();
        let cfg = TrainConfig { iterations: 200, batch_size: 8, lr: 0.05, ..Default::default() };
        let log = train(&mut model, &data, &cfg, None).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap().value(), 1.0);
        assert!(log.iterations.last().unwrap().loss < log.iterations[0].loss);
        assert!(log.iterations.iter().all(|r| r.forward_passes == 1));
    }

    #[test]
    fn training_is_deterministic() {
        let (m0, data) = toy();
        let cfg = TrainConfig { iterations: 30, batch_size: 4, lr: 0.01, mixup: true, seed: 9, ..Default::default() };
        let (mut a, mut b) = (m0.clone(), m0);
        train(&mut a, &data, &cfg, None).unwrap();
        train(&mut b, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_loss_is_reported_as_divergence() {
        let (mut model, data) = toy();
        let cfg = TrainConfig { iterations: 5, ..Default::default() };
        let err = fit(&mut model, &data, &cfg, None, |_, z, _| {
            Ok(Objective { loss: Loss::constant(z, f32::NAN), terms: vec![] })
        })
        .unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { iteration: 1, .. }));
    }

    #[test]
    fn best_validation_checkpoint_is_kept() {
        let (mut model, data) = toy();
        let before = model.clone();
        // lr = 0 keeps the parameters, so the initial model ties every later
        // evaluation and is kept.
        let cfg = TrainConfig { iterations: 10, lr: 0.0, eval_every: 5, ..Default::default() };
        let log = train(&mut model, &data, &cfg, Some(&data)).unwrap();
        assert_eq!(model, before);
        assert_eq!(log.best_iteration, Some(0));
        assert_eq!(log.evals.len(), 3);
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let (mut model, data) = toy();
        let cfg = TrainConfig { iterations: 3, ..Default::default() };
        let log = train(&mut model, &data, &cfg, Some(&data)).unwrap();
        let csv = log.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,loss,ce,metric");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn dataset_rejects_bad_targets() {
        let x = Tensor4::zeros(2, 1, 1, 1);
        assert!(Dataset::from_labels(x.clone(), &[0, 3], 2).is_err());
        let t = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(Dataset::new(x.clone(), t.clone(), Task::Single).is_err());
        assert!(Dataset::new(x, t, Task::Multi).is_ok());
    }
}
