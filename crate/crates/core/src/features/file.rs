//! Feature file format: magic `QFEA`, version (u32 LE), dtype code (u32 LE:
//! 1 = f32, 2 = f64), rank (u32 LE), each dimension (u64 LE), then the
//! row-major little-endian payload.
//!
//! Rank 2 `(frames, bins)` holds a log-mel spectrogram; rank 3
//! `(4, frames, bins)` holds quaternion features, component-major.

use super::encode::QuaternionFeatures;
use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::quat::QTensor;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QFEA";
pub const VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;
const DTYPE_F64: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FeatureData {
    pub fn len(&self) -> usize {
        match self {
            FeatureData::F32(v) => v.len(),
            FeatureData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            FeatureData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            FeatureData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    pub dims: Vec<usize>,
    pub data: FeatureData,
}

impl FeatureArray {
    pub fn new(dims: Vec<usize>, data: FeatureData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let code = match self.data {
            FeatureData::F32(_) => DTYPE_F32,
            FeatureData::F64(_) => DTYPE_F64,
        };
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            FeatureData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            FeatureData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(Error::Truncated { expected: n, found: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad feature file magic".into()));
        }
        need(16)?;
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported feature file version {version}")));
        }
        let width = match word(8) {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        let rank = word(12) as usize;
        let header = 16 + 8 * rank;
        need(header)?;
        let dims: Vec<usize> = (0..rank)
            .map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Format("feature dims overflow".into()))?;
        let expected = header + count;
        if bytes.len() != expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        let payload = &bytes[header..];
        let data = if width == 4 {
            FeatureData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            FeatureData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        Ok(Self { dims, data })
    }
}

impl From<&MelSpectrogram> for FeatureArray {
    fn from(mel: &MelSpectrogram) -> Self {
        Self { dims: vec![mel.frames, mel.bins], data: FeatureData::F64(mel.values.clone()) }
    }
}

impl From<&QuaternionFeatures> for FeatureArray {
    fn from(q: &QuaternionFeatures) -> Self {
        Self { dims: vec![4, q.frames(), q.bins()], data: FeatureData::F64(q.tensor.as_slice().to_vec()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile {
    Mel(MelSpectrogram),
    Quaternion(QuaternionFeatures),
}

impl TryFrom<FeatureArray> for FeatureFile {
    type Error = Error;

    fn try_from(a: FeatureArray) -> Result<Self> {
        let values = a.data.to_f64();
        match a.dims.as_slice() {
            &[frames, bins] => Ok(FeatureFile::Mel(MelSpectrogram::new(frames, bins, values)?)),
            &[4, frames, bins] => Ok(FeatureFile::Quaternion(QuaternionFeatures {
                tensor: QTensor::from_vec(1, frames, bins, values)?,
            })),
            dims => Err(Error::Format(format!("feature dims {dims:?} are neither (frames, bins) nor (4, frames, bins)"))),
        }
    }
}

pub fn save_feature_array(path: impl AsRef<Path>, a: &FeatureArray) -> Result<()> {
    std::fs::write(path, a.to_bytes())?;
    Ok(())
}

pub fn load_feature_array(path: impl AsRef<Path>) -> Result<FeatureArray> {
    FeatureArray::from_bytes(&std::fs::read(path)?)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    load_feature_array(path)?.try_into()
}
