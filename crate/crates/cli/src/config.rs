//! Flat `key=value` run configuration.

use crate::error::{CliError, CliResult};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model", "architecture: qcnn-mini, qresnet-mini or cnn-mini"),
    ("seed", "seed for initialization, batching and synthetic data"),
    ("iterations", "optimizer steps"),
    ("lr", "learning rate"),
    ("batch_size", "mini-batch size"),
    ("optimizer", "adam or sgd"),
    ("mixup", "mix pairs of training examples (true/false)"),
    ("eval_every", "validation interval in iterations (0: start and end only)"),
    ("data", "dataset directory (manifest.csv + feature files)"),
    ("val_data", "validation dataset directory"),
    ("checkpoint", "input checkpoint"),
    ("teacher", "teacher checkpoint for distillation"),
    ("student", "distillation student: from-plan (fresh weights) or prune-kd (pruned teacher weights)"),
    ("plan", "prune plan document to replay"),
    ("method", "importance method: l1, gm or op"),
    ("ratio", "pruning ratio p in [0, 1)"),
    ("layers", "target layers: default, from:N, last:N, ordinals like 4,5 or idx:I,J"),
    ("alpha", "weight of the supervised term in the distillation loss"),
    ("temperature", "distillation temperature"),
    ("t2_scaling", "multiply the KL term by T^2 (true/false)"),
    ("out", "output directory"),
    ("name", "model name in reports"),
    ("repeats", "timed inference repetitions"),
    ("inputs", "comma-separated metrics CSV files to merge"),
    ("source", "feature source: synth or wav"),
    ("wav", "comma-separated WAV files"),
    ("allow_rate_override", "accept WAV files not sampled at 32 kHz (true/false)"),
    ("classes", "synthetic class count"),
    ("samples", "synthetic example count"),
    ("frames", "synthetic frames per example"),
    ("bins", "synthetic mel bins per example"),
    ("multi_label", "synthetic multi-label task (true/false)"),
    ("noise", "synthetic noise standard deviation"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RunConfig {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got `{line}`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        if !known(key) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> CliResult<Self> {
        self.set(key, value.to_string())?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "{key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key).ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("bad value `{v}` for `{key}`: {e}"))))
            .transpose()
    }

    pub fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(CliError::Usage(format!("bad value `{v}` for `{key}`: expected true or false"))),
        }
    }

    /// A path that must already exist.
    pub fn existing_path(&self, key: &str) -> CliResult<PathBuf> {
        let p = PathBuf::from(self.require(key)?);
        if !p.exists() {
            return Err(CliError::Usage(format!("{key} path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn optional_existing_path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        if self.get(key).is_none() {
            return Ok(None);
        }
        self.existing_path(key).map(Some)
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    /// The output directory, created if needed.
    pub fn out_dir(&self) -> CliResult<PathBuf> {
        let p = PathBuf::from(self.str_or("out", "out"));
        std::fs::create_dir_all(&p)
            .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", p.display())))?;
        Ok(p)
    }
}
