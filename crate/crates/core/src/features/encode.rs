//! Quaternion encoding of a log-mel spectrogram: ψ and its first three
//! temporal derivatives become the R, I, J and K components.

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::quat::QTensor;

pub const MIN_FRAMES: usize = 7;

/// One quaternion channel over (frames × bins).
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionFeatures {
    pub tensor: QTensor<f64>,
}

impl QuaternionFeatures {
    pub fn frames(&self) -> usize {
        self.tensor.height()
    }

    pub fn bins(&self) -> usize {
        self.tensor.width()
    }

    /// Component `p` (0 = ψ, 1..=3 = derivatives), frame-major.
    pub fn plane(&self, p: usize) -> &[f64] {
        self.tensor.plane(p)
    }
}

/// First difference: central inside, one-sided at the two ends.
fn d1(x: &[f64], t: usize) -> f64 {
    let n = x.len();
    match t {
        0 => x[1] - x[0],
        t if t == n - 1 => x[n - 1] - x[n - 2],
        t => (x[t + 1] - x[t - 1]) / 2.0,
    }
}

/// Second difference: three-point stencil, shifted inward at the ends.
fn d2(x: &[f64], t: usize) -> f64 {
    let c = t.clamp(1, x.len() - 2);
    x[c - 1] - 2.0 * x[c] + x[c + 1]
}

/// Third difference: five-point central stencil inside, forward/backward
/// four-point stencils on the two frames at each end.
fn d3(x: &[f64], t: usize) -> f64 {
    let n = x.len();
    if t < 2 {
        -x[t] + 3.0 * x[t + 1] - 3.0 * x[t + 2] + x[t + 3]
    } else if t >= n - 2 {
        x[t] - 3.0 * x[t - 1] + 3.0 * x[t - 2] - x[t - 3]
    } else {
        (x[t + 2] - 2.0 * x[t + 1] + 2.0 * x[t - 1] - x[t - 2]) / 2.0
    }
}

pub fn encode_quaternion_features(mel: &MelSpectrogram) -> Result<QuaternionFeatures> {
    let (frames, bins) = (mel.frames, mel.bins);
    if frames < MIN_FRAMES {
        return Err(Error::invalid(format!(
            "quaternion encoding needs at least {MIN_FRAMES} frames, got {frames}"
        )));
    }
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; frames * bins]);
    let mut series = vec![0.0; frames];
    for f in 0..bins {
        for (t, s) in series.iter_mut().enumerate() {
            *s = mel.at(t, f);
        }
        for t in 0..frames {
            let i = t * bins + f;
            planes[0][i] = series[t];
            planes[1][i] = d1(&series, t);
            planes[2][i] = d2(&series, t);
            planes[3][i] = d3(&series, t);
        }
    }
    let tensor = QTensor::from_planes(1, frames, bins, planes)?;
    Ok(QuaternionFeatures { tensor })
}
