//! Split batch normalization: every real channel of every quaternion
//! plane keeps its own statistics and affine parameters.

use crate::error::{Error, Result};
use crate::quat::QTensor;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c != self.channels
            || [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
                .iter()
                .any(|v| v.len() != self.channels)
        {
            return Err(Error::shape(format!(
                "batch norm state holds {} channels, input has {}",
                self.channels, x.c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        let eps = T::from_f64_lossy(BN_EPS);
        let count = x.n * x.plane_len();
        let mut mean = vec![T::zero(); x.c];
        let mut var = vec![T::zero(); x.c];
        match mode {
            Mode::Train => {
                let cnt = T::from_usize(count).unwrap();
                for c in 0..x.c {
                    let s: T = (0..x.n).map(|b| x.channel(b, c).iter().copied().sum::<T>()).sum();
                    let m = s / cnt;
                    let v: T = (0..x.n)
                        .map(|b| x.channel(b, c).iter().map(|&u| (u - m) * (u - m)).sum::<T>())
                        .sum::<T>()
                        / cnt;
                    mean[c] = m;
                    var[c] = v;
                }
            }
            Mode::Eval => {
                mean.clone_from(&self.running_mean);
                var.clone_from(&self.running_var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for b in 0..x.n {
            for c in 0..x.c {
                let (m, is, g, be) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
                let xh = xhat.channel_mut(b, c);
                xh.iter_mut().for_each(|v| *v = (*v - m) * is);
                let yc = y.channel_mut(b, c);
                for (o, &h) in yc.iter_mut().zip(xhat.channel(b, c)) {
                    *o = g * h + be;
                }
            }
        }
        Ok((y, BnCache { xhat, inv_std, batch_mean: mean, batch_var: var, mode }))
    }

    /// Folds a batch's statistics into the running estimates.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T], count: usize) {
        let mom = T::from_f64_lossy(BN_MOMENTUM);
        let unbias = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        for c in 0..self.channels {
            self.running_mean[c] = mom * self.running_mean[c] + (T::one() - mom) * batch_mean[c];
            self.running_var[c] = mom * self.running_var[c] + (T::one() - mom) * batch_var[c] * unbias;
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
        if !dy.same_shape(&cache.xhat) {
            return Err(Error::shape("batch norm output gradient has the wrong shape"));
        }
        let n = dy.n;
        let count = T::from_usize(n * dy.plane_len()).unwrap();
        let mut dgamma = vec![T::zero(); self.channels];
        let mut dbeta = vec![T::zero(); self.channels];
        let mut dx = Tensor4::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..self.channels {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                for (&g, &h) in dy.channel(b, c).iter().zip(cache.xhat.channel(b, c)) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            let scale = self.gamma[c] * cache.inv_std[c];
            for b in 0..n {
                let src = dy.channel(b, c);
                let xh = cache.xhat.channel(b, c);
                let dst = dx.channel_mut(b, c);
                match cache.mode {
                    Mode::Train => {
                        for ((d, &g), &h) in dst.iter_mut().zip(src).zip(xh) {
                            *d = scale * (g - sum_dy / count - h * sum_dy_xhat / count);
                        }
                    }
                    Mode::Eval => {
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d = scale * g;
                        }
                    }
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}

/// Split batch norm over a batch of quaternion maps; state has one entry per
/// real channel (`4 × quaternion channels`). Train mode also folds the
/// batch statistics into the running estimates.
pub fn split_batchnorm<T: Scalar>(
    x: &[QTensor<T>],
    state: &mut BatchNormLayer<T>,
    mode: Mode,
) -> Result<Vec<QTensor<T>>> {
    let batch = Tensor4::from_quaternions(x)?;
    let (y, cache) = state.forward(&batch, mode)?;
    if mode == Mode::Train {
        state.update_running(&cache.batch_mean, &cache.batch_var, batch.n * batch.plane_len());
    }
    (0..y.n).map(|b| y.quaternion_item(b)).collect()
}
