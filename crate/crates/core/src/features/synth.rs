//! Synthetic labeled feature sets and the on-disk dataset directory layout.

use super::encode::{encode_quaternion_features, QuaternionFeatures};
use super::file::{load_feature_file, save_feature_array, FeatureArray, FeatureData, FeatureFile};
use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Task;
use crate::tensor::{Matrix, Tensor4};
use crate::train::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples: usize,
    pub seed: u64,
    pub frames: usize,
    pub bins: usize,
    /// Each example carries its primary class plus each other class with
    /// probability 1/4.
    pub multi_label: bool,
    /// Standard deviation of the additive log-energy noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { classes: 4, samples: 2000, seed: 0, frames: 16, bins: 16, multi_label: false, noise: 0.5 }
    }
}

/// Class templates: a Gaussian bump in frequency centered on the class's
/// slice of the band, amplitude-modulated over time at a class-specific rate.
fn template(c: usize, classes: usize, t: usize, f: usize, frames: usize, bins: usize, phase: f64) -> f64 {
    let mu = (c as f64 + 0.5) * bins as f64 / classes as f64;
    let sigma = (bins as f64 / (2.5 * classes as f64)).max(0.75);
    let bump = (-(f as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp();
    let modulation = 1.0 + 0.5 * (2.0 * PI * (c + 1) as f64 * t as f64 / frames as f64 + phase).sin();
    bump * modulation
}

/// Builds a deterministic dataset of encoded quaternion features. Example `i`
/// has primary class `i mod G`, so class counts differ by at most one.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let SynthSpec { classes, samples, seed, frames, bins, multi_label, noise } = *spec;
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if samples < classes {
        return Err(Error::invalid(format!("need at least one sample per class ({samples} < {classes})")));
    }
    if bins == 0 || !(noise >= 0.0) {
        return Err(Error::invalid("invalid synthetic spec"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let item = 4 * frames * bins;
    let mut inputs = Vec::with_capacity(samples * item);
    let mut targets = Matrix::zeros(samples, classes);
    for i in 0..samples {
        let primary = i % classes;
        let row = targets.row_mut(i);
        row[primary] = 1.0;
        if multi_label {
            for (c, slot) in row.iter_mut().enumerate() {
                if c != primary && rng.random_bool(0.25) {
                    *slot = 1.0;
                }
            }
        }
        let active: Vec<usize> = (0..classes).filter(|&c| row[c] == 1.0).collect();
        let params: Vec<(f64, f64)> = active.iter().map(|_| (rng.random_range(1.5..2.5), rng.random_range(0.0..2.0 * PI))).collect();
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            for f in 0..bins {
                let mut v = -2.0;
                for (&c, &(amp, phase)) in active.iter().zip(&params) {
                    v += amp * template(c, classes, t, f, frames, bins, phase);
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(v + noise * z);
            }
        }
        let q = encode_quaternion_features(&MelSpectrogram::new(frames, bins, values)?)?;
        inputs.extend(q.tensor.as_slice().iter().map(|&v| v as f32));
    }
    let task = if multi_label { Task::Multi } else { Task::Single };
    Dataset::new(Tensor4::from_vec(samples, 4, frames, bins, inputs)?, targets, task)
}

const MANIFEST: &str = "manifest.csv";
const INFO: &str = "dataset.txt";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    file: String,
    labels: String,
}

/// Writes one feature file per example plus `manifest.csv` (file, labels as
/// `;`-separated class indices) and `dataset.txt` (classes, task).
pub fn save_dataset_dir(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let task = match data.task {
        Task::Single => "single",
        Task::Multi => "multi",
    };
    std::fs::write(dir.join(INFO), format!("classes={}\ntask={task}\n", data.classes()))?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST)).map_err(csv_err)?;
    let (c, h, wd) = (data.inputs.c, data.inputs.h, data.inputs.w);
    if c != 4 {
        return Err(Error::invalid("dataset directories hold single-quaternion-channel features"));
    }
    for i in 0..data.len() {
        let name = format!("item_{i:06}.qfea");
        let arr = FeatureArray::new(vec![4, h, wd], FeatureData::F32(data.inputs.item(i).to_vec()))?;
        save_feature_array(dir.join(&name), &arr)?;
        let labels: Vec<String> = (0..data.classes()).filter(|&g| data.targets.get(i, g) == 1.0).map(|g| g.to_string()).collect();
        w.serialize(ManifestRow { file: name, labels: labels.join(";") }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset directory written by [`save_dataset_dir`] or assembled by
/// hand; log-mel files (rank 2) are encoded on load.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let info = std::fs::read_to_string(dir.join(INFO))?;
    let (mut classes, mut task) = (None, Task::Single);
    for line in info.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("classes", v)) => classes = Some(v.parse::<usize>().map_err(|_| Error::Format(format!("bad class count `{v}`")))?),
            Some(("task", "single")) => task = Task::Single,
            Some(("task", "multi")) => task = Task::Multi,
            _ => return Err(Error::Format(format!("unrecognized dataset.txt line `{line}`"))),
        }
    }
    let classes = classes.ok_or_else(|| Error::Format("dataset.txt lacks `classes`".into()))?;
    let mut r = csv::Reader::from_path(dir.join(MANIFEST)).map_err(csv_err)?;
    let mut inputs = Vec::new();
    let mut rows = Vec::new();
    let mut shape = None;
    for rec in r.deserialize::<ManifestRow>() {
        let rec = rec.map_err(csv_err)?;
        let q: QuaternionFeatures = match load_feature_file(dir.join(&rec.file))? {
            FeatureFile::Quaternion(q) => q,
            FeatureFile::Mel(m) => encode_quaternion_features(&m)?,
        };
        let s = (q.frames(), q.bins());
        if *shape.get_or_insert(s) != s {
            return Err(Error::shape(format!("{} is {s:?}, earlier files are {:?}", rec.file, shape.unwrap())));
        }
        inputs.extend(q.tensor.as_slice().iter().map(|&v| v as f32));
        let mut row = vec![0.0f32; classes];
        for l in rec.labels.split(';').map(str::trim).filter(|l| !l.is_empty()) {
            let g: usize = l.parse().map_err(|_| Error::Format(format!("bad label `{l}` for {}", rec.file)))?;
            if g >= classes {
                return Err(Error::Format(format!("label {g} of {} exceeds {classes} classes", rec.file)));
            }
            row[g] = 1.0;
        }
        rows.push(row);
    }
    let (frames, bins) = shape.ok_or_else(|| Error::Format("empty manifest".into()))?;
    let n = rows.len();
    Dataset::new(Tensor4::from_vec(n, 4, frames, bins, inputs)?, Matrix::from_rows(&rows)?, task)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
