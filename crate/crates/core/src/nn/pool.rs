//! Per-plane pooling.

use crate::error::{Error, Result};
use crate::quat::QTensor;
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

fn pooled_size(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 {
        return Err(Error::shape("pool window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::shape(format!("pool window {window} exceeds spatial size {h}x{w}")));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Pools each channel plane; for max pooling also returns the flat source
/// index (within the item) of every output element.
pub fn pool_forward<T: Scalar>(
    x: &Tensor4<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<(Tensor4<T>, Vec<usize>)> {
    let (ho, wo) = pooled_size(x.h, x.w, window, stride)?;
    let mut y = Tensor4::zeros(x.n, x.c, ho, wo);
    let mut argmax = if kind == PoolKind::Max { vec![0; y.data.len()] } else { Vec::new() };
    let area = T::from_usize(window * window).unwrap();
    let plane = x.plane_len();
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(b, c);
            let out_base = (b * x.c + c) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let o = out_base + oy * wo + ox;
                    match kind {
                        PoolKind::Max => {
                            let mut best = y0 * x.w + x0;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let idx = (y0 + dy) * x.w + x0 + dx;
                                    if src[idx] > src[best] {
                                        best = idx;
                                    }
                                }
                            }
                            y.data[o] = src[best];
                            argmax[o] = c * plane + best;
                        }
                        PoolKind::Avg => {
                            let mut s = T::zero();
                            for dy in 0..window {
                                for dx in 0..window {
                                    s += src[(y0 + dy) * x.w + x0 + dx];
                                }
                            }
                            y.data[o] = s / area;
                        }
                    }
                }
            }
        }
    }
    Ok((y, argmax))
}

pub fn pool_backward<T: Scalar>(
    in_dims: (usize, usize, usize, usize),
    kind: PoolKind,
    window: usize,
    stride: usize,
    argmax: &[usize],
    dy: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, c, h, w) = in_dims;
    let mut dx = Tensor4::zeros(n, c, h, w);
    let (ho, wo) = (dy.h, dy.w);
    let area = T::from_usize(window * window).unwrap();
    let item = c * h * w;
    for b in 0..n {
        for ch in 0..c {
            let out_base = (b * c + ch) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = out_base + oy * wo + ox;
                    let g = dy.data[o];
                    match kind {
                        PoolKind::Max => dx.data[b * item + argmax[o]] += g,
                        PoolKind::Avg => {
                            let plane = dx.channel_mut(b, ch);
                            for dyy in 0..window {
                                for dxx in 0..window {
                                    plane[(oy * stride + dyy) * w + ox * stride + dxx] += g / area;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean over each channel plane: `N × C × H × W` → `N × C`.
pub fn global_avg_forward<T: Scalar>(x: &Tensor4<T>) -> Matrix<T> {
    let area = T::from_usize(x.plane_len()).unwrap();
    let mut y = Matrix::zeros(x.n, x.c);
    for b in 0..x.n {
        for c in 0..x.c {
            y.data[b * x.c + c] = x.channel(b, c).iter().copied().sum::<T>() / area;
        }
    }
    y
}

pub fn global_avg_backward<T: Scalar>(in_dims: (usize, usize, usize, usize), dy: &Matrix<T>) -> Tensor4<T> {
    let (n, c, h, w) = in_dims;
    let area = T::from_usize(h * w).unwrap();
    let mut dx = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let g = dy.data[b * c + ch] / area;
            dx.channel_mut(b, ch).iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

/// Pools each of the four planes of a quaternion map independently.
pub fn split_pool<T: Scalar>(x: &QTensor<T>, kind: PoolKind, window: usize, stride: usize) -> Result<QTensor<T>> {
    let batch = Tensor4::from_quaternions(std::slice::from_ref(x))?;
    pool_forward(&batch, kind, window, stride)?.0.quaternion_item(0)
}
