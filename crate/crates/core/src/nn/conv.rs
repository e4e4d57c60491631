//! Real-valued 2-D convolution (cross-correlation) and its im2col helpers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Kernel size, stride and zero padding shared by both convolution kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        Self { kh: k, kw: k, stride, pad }
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// `⌊(H + 2·pad − k)/stride⌋ + 1` for both axes.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.kh || pw < self.kw {
            return Err(Error::shape(format!(
                "padded input {ph}x{pw} is smaller than the {}x{} kernel",
                self.kh, self.kw
            )));
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

/// Unfolds channels `[ch0, ch0 + nch)` of `x` into a
/// `(nch·kh·kw) × (N·H'·W')` matrix.
pub(crate) fn im2col<T: Scalar>(
    x: &Tensor4<T>,
    ch0: usize,
    nch: usize,
    g: &ConvGeometry,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let cols = x.n * ho * wo;
    let mut out = vec![T::zero(); nch * g.taps() * cols];
    let (h, w) = (x.h as isize, x.w as isize);
    for ci in 0..nch {
        for b in 0..x.n {
            let plane = x.channel(b, ch0 + ci);
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let row = (ci * g.kh + dy) * g.kw + dx;
                    let base = row * cols + b * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let dst = &mut out[base + oy * wo..base + (oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into channels
/// `[ch0, ch0 + nch)` of `dx`.
pub(crate) fn col2im_add<T: Scalar>(
    cols_mat: &[T],
    dx: &mut Tensor4<T>,
    ch0: usize,
    nch: usize,
    g: &ConvGeometry,
    ho: usize,
    wo: usize,
) {
    let cols = dx.n * ho * wo;
    let (h, w) = (dx.h as isize, dx.w as isize);
    let width = dx.w;
    for ci in 0..nch {
        for b in 0..dx.n {
            let plane = dx.channel_mut(b, ch0 + ci);
            for dy in 0..g.kh {
                for dxk in 0..g.kw {
                    let row = (ci * g.kh + dy) * g.kw + dxk;
                    let base = row * cols + b * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &cols_mat[base + oy * wo..base + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + dxk) as isize - g.pad as isize;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `N × C × H × W` → `C × (N·H·W)`.
pub(crate) fn to_channel_major<T: Scalar>(t: &Tensor4<T>) -> Vec<T> {
    let p = t.plane_len();
    let mut out = vec![T::zero(); t.data.len()];
    for b in 0..t.n {
        for c in 0..t.c {
            let dst = (c * t.n + b) * p;
            out[dst..dst + p].copy_from_slice(t.channel(b, c));
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major<T: Scalar>(
    m: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Tensor4<T> {
    let p = h * w;
    let mut out = Tensor4::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let src = (ch * n + b) * p;
            out.channel_mut(b, ch).copy_from_slice(&m[src..src + p]);
        }
    }
    out
}

pub(crate) fn uniform_init<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect()
}

/// Real convolution layer with weights `c_out × c_in × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeometry,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> RealConvLayer<T> {
    pub fn zeros(c_in: usize, c_out: usize, geom: ConvGeometry, bias: bool) -> Self {
        Self {
            c_in,
            c_out,
            geom,
            weight: vec![T::zero(); c_out * c_in * geom.taps()],
            bias: bias.then(|| vec![T::zero(); c_out]),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut l = Self::zeros(c_in, c_out, geom, bias);
        l.weight = uniform_init(rng, l.weight.len(), c_in * geom.taps());
        l
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn weight_at(&self, o: usize, i: usize, y: usize, x: usize) -> T {
        self.weight[((o * self.c_in + i) * self.geom.kh + y) * self.geom.kw + x]
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(usize, usize)> {
        if x.c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        self.geom.output_size(x.h, x.w)
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (ho, wo) = self.check_input(x)?;
        let cols = x.n * ho * wo;
        let k = self.c_in * self.geom.taps();
        let col = im2col(x, 0, self.c_in, &self.geom, ho, wo);
        let mut y = vec![T::zero(); self.c_out * cols];
        if let Some(b) = &self.bias {
            for (o, &bv) in b.iter().enumerate() {
                y[o * cols..(o + 1) * cols].iter_mut().for_each(|v| *v = bv);
            }
        }
        T::gemm(
            self.c_out,
            k,
            cols,
            T::one(),
            &self.weight,
            (k, 1),
            &col,
            (cols, 1),
            T::one(),
            &mut y,
            (cols, 1),
        );
        Ok(from_channel_major(&y, x.n, self.c_out, ho, wo))
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Vec<T>, Option<Vec<T>>)> {
        let (ho, wo) = self.check_input(x)?;
        if dy.dims() != (x.n, self.c_out, ho, wo) {
            return Err(Error::shape("conv output gradient has the wrong shape"));
        }
        let cols = x.n * ho * wo;
        let k = self.c_in * self.geom.taps();
        let col = im2col(x, 0, self.c_in, &self.geom, ho, wo);
        let dym = to_channel_major(dy);
        let mut dw = vec![T::zero(); self.weight.len()];
        T::gemm(self.c_out, cols, k, T::one(), &dym, (cols, 1), &col, (1, cols), T::zero(), &mut dw, (k, 1));
        let mut dcol = vec![T::zero(); k * cols];
        T::gemm(k, self.c_out, cols, T::one(), &self.weight, (1, k), &dym, (cols, 1), T::zero(), &mut dcol, (cols, 1));
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        col2im_add(&dcol, &mut dx, 0, self.c_in, &self.geom, ho, wo);
        let db = self
            .bias
            .as_ref()
            .map(|_| (0..self.c_out).map(|o| dym[o * cols..(o + 1) * cols].iter().copied().sum()).collect());
        Ok((dx, dw, db))
    }
}

/// Cross-correlation of `x` with `layer` (standalone form of the layer's forward pass).
pub fn real_conv2d<T: Scalar>(layer: &RealConvLayer<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(layer: &RealConvLayer<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let (ho, wo) = layer.geom.output_size(x.h, x.w).unwrap();
        let g = layer.geom;
        let mut y = Tensor4::zeros(x.n, layer.c_out, ho, wo);
        for b in 0..x.n {
            for o in 0..layer.c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = layer.bias.as_ref().map_or(0.0, |b| b[o]);
                        for i in 0..layer.c_in {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += layer.weight_at(o, i, ky, kx)
                                            * x.channel(b, i)[iy as usize * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                        y.channel_mut(b, o)[oy * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let layer = RealConvLayer::<f64>::zeros(3, 5, ConvGeometry::square(3, 1, 1), false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = layer.forward(&random_tensor(&mut rng, 2, 3, 6, 5)).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        assert_eq!(y.dims(), (2, 5, 6, 5));
    }

    #[test]
    fn identity_kernel() {
        let mut layer = RealConvLayer::<f64>::zeros(1, 1, ConvGeometry::square(1, 1, 0), false);
        layer.weight[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 1, 1, 4, 7);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad) in [(1, 1), (2, 0), (2, 1), (1, 0)] {
            let layer = RealConvLayer::init(4, 4, ConvGeometry::square(3, stride, pad), true, &mut rng);
            let x = random_tensor(&mut rng, 2, 4, 7, 6);
            let a = layer.forward(&x).unwrap();
            let b = naive(&layer, &x);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() <= 1e-5 * v.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn output_size_formula_and_errors() {
        let g = ConvGeometry::square(3, 2, 1);
        assert_eq!(g.output_size(7, 8).unwrap(), (4, 4));
        assert!(ConvGeometry::square(5, 1, 0).output_size(3, 10).is_err());
        let layer = RealConvLayer::<f32>::zeros(2, 2, g, false);
        assert!(layer.forward(&Tensor4::zeros(1, 3, 5, 5)).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ConvGeometry::square(3, 2, 1);
        let x = random_tensor(&mut rng, 2, 3, 5, 6);
        let (ho, wo) = g.output_size(5, 6).unwrap();
        let col = im2col(&x, 0, 3, &g, ho, wo);
        let r: Vec<f64> = (0..col.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut back = Tensor4::zeros(2, 3, 5, 6);
        col2im_add(&r, &mut back, 0, 3, &g, ho, wo);
        let rhs: f64 = back.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
