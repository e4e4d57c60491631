//! Binary checkpoint format.
//!
//! Layout: magic `QPRS`, format version (u32 LE), header length (u64 LE), a
//! JSON header describing the layers, then every state tensor as
//! little-endian `f32` in header order. An optional optimizer section
//! (first then second moments) follows the model tensors.

use super::graph::{InputSpec, LayerSpec, ModelGraph, Task};
use crate::autodiff::{OptimState, OptimizerKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QPRS";
pub const VERSION: u32 = 1;
pub const PLANE_ORDER: &str = "R,I,J,K";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: String,
    input: InputSpec,
    classes: usize,
    task: Task,
    planes: String,
    layers: Vec<LayerSpec>,
    tensors: Vec<usize>,
    optimizer: Option<OptimizerHeader>,
}

fn push_f32s<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

/// Serializes a model (and optionally its optimizer state).
pub fn to_bytes<T: Scalar>(model: &ModelGraph<T>, optim: Option<&OptimState<T>>) -> Result<Vec<u8>> {
    let state = model.state();
    let optimizer = optim.map(|o| OptimizerHeader {
        kind: o.kind,
        lr: o.lr,
        step: o.step,
        moments: o.m.iter().map(Vec::len).collect(),
    });
    let header = Header {
        arch: model.arch.clone(),
        input: model.input,
        classes: model.classes,
        task: model.task,
        planes: PLANE_ORDER.to_string(),
        layers: model.specs(),
        tensors: state.iter().map(|t| t.len()).collect(),
        optimizer,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in state {
        push_f32s(&mut out, t);
    }
    if let Some(o) = optim {
        for t in o.m.iter().chain(&o.v) {
            push_f32s(&mut out, t);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { expected: self.pos + n, found: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<(ModelGraph<f32>, Option<OptimState<f32>>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("file too short for a checkpoint".into()))? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.planes != PLANE_ORDER {
        return Err(Error::Format(format!("unsupported plane ordering {}", header.planes)));
    }
    let mut model = ModelGraph::from_specs(header.arch, header.input, header.classes, header.task, &header.layers);
    {
        let state = model.state_mut();
        if state.len() != header.tensors.len() || state.iter().zip(&header.tensors).any(|(t, &n)| t.len() != n) {
            return Err(Error::Format("tensor table does not match the layer list".into()));
        }
        for (t, &n) in state.into_iter().zip(&header.tensors) {
            *t = r.f32s(n)?;
        }
    }
    let optim = match header.optimizer {
        None => None,
        Some(h) => {
            let m = h.moments.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            let v = h.moments.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            Some(OptimState { kind: h.kind, lr: h.lr, step: h.step, m, v })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - r.pos)));
    }
    model.validate()?;
    Ok((model, optim))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &ModelGraph<T>, optim: Option<&OptimState<T>>) -> Result<()> {
    std::fs::write(path, to_bytes(model, optim)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelGraph<f32>, Option<OptimState<f32>>)> {
    from_bytes(&std::fs::read(path)?)
}
