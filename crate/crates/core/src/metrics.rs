//! Evaluation metrics and model cost accounting.

use crate::autodiff::predict;
use crate::error::{Error, Result};
use crate::nn::{ActShape, Layer, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor4};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::time::Instant;

/// Non-interpolated average precision. Examples are ranked by descending
/// score; equal scores keep their original order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-class AP (`None` for classes without positives) and their mean over
/// the defined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

pub fn mean_average_precision<T: Scalar>(scores: &Matrix<T>, labels: &Matrix<T>) -> Result<MapResult> {
    if (scores.rows, scores.cols) != (labels.rows, labels.cols) {
        return Err(Error::shape("score and label matrices differ in shape"));
    }
    let mut per_class = Vec::with_capacity(scores.cols);
    for g in 0..scores.cols {
        let s: Vec<f64> = (0..scores.rows).map(|r| scores.get(r, g).to_f64_lossy()).collect();
        let l: Vec<bool> = (0..labels.rows).map(|r| labels.get(r, g) > T::zero()).collect();
        match average_precision(&s, &l) {
            Ok(ap) => per_class.push(Some(ap)),
            Err(Error::UndefinedMetric(_)) => {
                log::warn!("class {g} has no positive examples; skipped in mAP");
                per_class.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("no class has a positive example".into()));
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MapResult { per_class, map })
}

/// Mean over folds of `correct / total`.
pub fn fold_accuracy(folds: &[(usize, usize)]) -> Result<f64> {
    if folds.is_empty() {
        return Err(Error::invalid("fold accuracy needs at least one fold"));
    }
    let mut sum = 0.0;
    for (i, &(correct, total)) in folds.iter().enumerate() {
        if total == 0 {
            return Err(Error::invalid(format!("fold {i} is empty")));
        }
        if correct > total {
            return Err(Error::invalid(format!("fold {i} has {correct} correct of {total}")));
        }
        sum += correct as f64 / total as f64;
    }
    Ok(sum / folds.len() as f64)
}

/// Number of rows whose arg-max logit matches the arg-max target.
pub fn correct_count<T: Scalar>(logits: &Matrix<T>, targets: &Matrix<T>) -> usize {
    (0..logits.rows).filter(|&r| argmax(logits.row(r)) == argmax(targets.row(r))).count()
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Learned real scalars, including biases and batch-norm affine parameters.
pub fn count_params<T: Scalar>(model: &ModelGraph<T>) -> usize {
    model.layers.iter().map(Layer::param_count).sum()
}

fn layer_macs<T: Scalar>(layer: &Layer<T>, input: ActShape) -> Result<(u64, ActShape)> {
    let out = layer.output_shape(input)?;
    let spatial = |s: ActShape| match s {
        ActShape::Spatial { h, w, .. } => (h * w) as u64,
        ActShape::Flat { .. } => 1,
    };
    let macs = match layer {
        Layer::Conv(l) => (l.c_out * l.c_in * l.geom.taps()) as u64 * spatial(out),
        Layer::QConv(l) => 16 * (l.q_out * l.q_in * l.geom.taps()) as u64 * spatial(out),
        Layer::Linear(l) => (l.in_features * l.out_features) as u64,
        Layer::QLinear(l) => 16 * (l.q_in * l.q_out) as u64,
        Layer::Residual(body) => {
            let mut cur = input;
            let mut total = 0;
            for l in body {
                let (m, next) = layer_macs(l, cur)?;
                total += m;
                cur = next;
            }
            total
        }
        Layer::BatchNorm(_) | Layer::Relu | Layer::Pool { .. } | Layer::GlobalAvgPool | Layer::Flatten => 0,
    };
    Ok((macs, out))
}

/// Multiply-accumulates of one forward pass for a single input item. A
/// Hamilton product counts as 16 MACs; normalization, activations and
/// pooling count as zero.
pub fn count_macs<T: Scalar>(model: &ModelGraph<T>) -> Result<u64> {
    Ok(layer_macs_per_layer(model)?.iter().sum())
}

/// MACs of each top-level layer.
pub fn layer_macs_per_layer<T: Scalar>(model: &ModelGraph<T>) -> Result<Vec<u64>> {
    let mut cur = model.input_shape();
    let mut out = Vec::with_capacity(model.layers.len());
    for l in &model.layers {
        let (m, next) = layer_macs(l, cur)?;
        out.push(m);
        cur = next;
    }
    Ok(out)
}

/// Median wall-clock time of `repeats` inference passes over `batch`, after
/// one untimed warm-up pass.
pub fn timed_inference<T: Scalar>(model: &ModelGraph<T>, batch: &Tensor4<T>, repeats: usize) -> Result<f64> {
    if repeats < 3 {
        return Err(Error::invalid(format!("timed inference needs at least 3 repeats, got {repeats}")));
    }
    predict(model, batch)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(predict(model, batch)?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[repeats / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Map(MapResult),
    Accuracy { folds: Vec<f64>, mean: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Map(_) => "map",
            Metric::Accuracy { .. } => "accuracy",
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Metric::Map(m) => m.map,
            Metric::Accuracy { mean, .. } => *mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub method: String,
    pub p: f64,
    pub metric: Metric,
    pub params: usize,
    pub macs: u64,
    pub time_s: f64,
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub method: String,
    pub p: f64,
    pub metric: String,
    pub value: f64,
    pub params: usize,
    pub macs: u64,
    pub time_s: f64,
}

pub const CSV_COLUMNS: [&str; 8] = ["model", "method", "p", "metric", "value", "params", "macs", "time_s"];

impl EvalReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            model: self.model.clone(),
            method: self.method.clone(),
            p: self.p,
            metric: self.metric.name().to_string(),
            value: self.metric.value(),
            params: self.params,
            macs: self.macs,
            time_s: self.time_s,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "model: {}\nmethod: {}\np: {}\n{}: {:.6}\nparams: {}\nmacs: {}\ntime_s: {:.6}\n",
            self.model,
            self.method,
            self.p,
            self.metric.name(),
            self.metric.value(),
            self.params,
            self.macs,
            self.time_s
        );
        match &self.metric {
            Metric::Map(m) => {
                for (g, ap) in m.per_class.iter().enumerate() {
                    match ap {
                        Some(v) => s += &format!("ap[{g}]: {v:.6}\n"),
                        None => s += &format!("ap[{g}]: undefined\n"),
                    }
                }
            }
            Metric::Accuracy { folds, .. } => {
                for (i, f) in folds.iter().enumerate() {
                    s += &format!("fold[{i}]: {f:.6}\n");
                }
            }
        }
        s
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV, naming the first missing column on schema mismatch.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    for col in CSV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Format(format!("metrics CSV is missing column `{col}`")));
        }
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
