//! Quaternion convolution realized as signed plane-level real convolutions.

use super::conv::{col2im_add, from_channel_major, im2col, to_channel_major, uniform_init, ConvGeometry, RealConvLayer};
use crate::error::{Error, Result};
use crate::quat::{QTensor, HAMILTON_TABLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;

/// Quaternion convolution with filter banks F_R, F_I, F_J, F_K.
///
/// `weight` holds the four banks back to back, each `q_out × q_in × kh × kw`.
/// `bias` holds one quaternion per output channel as four planes of `q_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct QConvLayer<T> {
    pub q_in: usize,
    pub q_out: usize,
    pub geom: ConvGeometry,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> QConvLayer<T> {
    pub fn zeros(q_in: usize, q_out: usize, geom: ConvGeometry, bias: bool) -> Self {
        Self {
            q_in,
            q_out,
            geom,
            weight: vec![T::zero(); 4 * q_out * q_in * geom.taps()],
            bias: bias.then(|| vec![T::zero(); 4 * q_out]),
        }
    }

    /// Each bank uniform in `±1/√(4·q_in·kh·kw)`.
    pub fn init<R: Rng + ?Sized>(
        q_in: usize,
        q_out: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut l = Self::zeros(q_in, q_out, geom, bias);
        l.weight = uniform_init(rng, l.weight.len(), 4 * q_in * geom.taps());
        l
    }

    pub fn bank_len(&self) -> usize {
        self.q_out * self.q_in * self.geom.taps()
    }

    /// Filter-size of one quaternion filter's component: `q_in·kh·kw`.
    pub fn filter_len(&self) -> usize {
        self.q_in * self.geom.taps()
    }

    pub fn bank(&self, component: usize) -> &[T] {
        let n = self.bank_len();
        &self.weight[component * n..(component + 1) * n]
    }

    pub fn bank_mut(&mut self, component: usize) -> &mut [T] {
        let n = self.bank_len();
        &mut self.weight[component * n..(component + 1) * n]
    }

    /// Component `o` of filter `m`, flattened row-major over `(q_in, kh, kw)`.
    pub fn filter_component(&self, m: usize, component: usize) -> &[T] {
        let f = self.filter_len();
        &self.bank(component)[m * f..(m + 1) * f]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(usize, usize)> {
        if x.c != 4 * self.q_in {
            return Err(Error::shape(format!(
                "quaternion conv expects {} quaternion channels ({} real), got {} real",
                self.q_in,
                4 * self.q_in,
                x.c
            )));
        }
        self.geom.output_size(x.h, x.w)
    }

    /// Batched forward pass over plane-major quaternion channels.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (ho, wo) = self.check_input(x)?;
        let cols = x.n * ho * wo;
        let f = self.filter_len();
        let block = self.q_out * cols;
        let mut y = vec![T::zero(); 4 * block];
        if let Some(b) = &self.bias {
            for (ch, &bv) in b.iter().enumerate() {
                y[ch * cols..(ch + 1) * cols].iter_mut().for_each(|v| *v = bv);
            }
        }
        for c in 0..4 {
            let col = im2col(x, c * self.q_in, self.q_in, &self.geom, ho, wo);
            for (o, row) in HAMILTON_TABLE.iter().enumerate() {
                let (src, sign) = row[c];
                T::gemm(
                    self.q_out,
                    f,
                    cols,
                    T::from_f64_lossy(sign as f64),
                    self.bank(src),
                    (f, 1),
                    &col,
                    (cols, 1),
                    T::one(),
                    &mut y[o * block..(o + 1) * block],
                    (cols, 1),
                );
            }
        }
        Ok(from_channel_major(&y, x.n, 4 * self.q_out, ho, wo))
    }

    /// Returns `(dx, dweight, dbias)` for the batched forward pass.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Vec<T>, Option<Vec<T>>)> {
        let (ho, wo) = self.check_input(x)?;
        if dy.dims() != (x.n, 4 * self.q_out, ho, wo) {
            return Err(Error::shape("quaternion conv output gradient has the wrong shape"));
        }
        let cols = x.n * ho * wo;
        let f = self.filter_len();
        let block = self.q_out * cols;
        let bank = self.bank_len();
        let dym = to_channel_major(dy);
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut dcol = vec![T::zero(); f * cols];
        for c in 0..4 {
            let col = im2col(x, c * self.q_in, self.q_in, &self.geom, ho, wo);
            dcol.iter_mut().for_each(|v| *v = T::zero());
            for (o, row) in HAMILTON_TABLE.iter().enumerate() {
                let (src, sign) = row[c];
                let s = T::from_f64_lossy(sign as f64);
                let dy_o = &dym[o * block..(o + 1) * block];
                T::gemm(
                    self.q_out,
                    cols,
                    f,
                    s,
                    dy_o,
                    (cols, 1),
                    &col,
                    (1, cols),
                    T::one(),
                    &mut dw[src * bank..(src + 1) * bank],
                    (f, 1),
                );
                T::gemm(f, self.q_out, cols, s, self.bank(src), (1, f), dy_o, (cols, 1), T::one(), &mut dcol, (cols, 1));
            }
            col2im_add(&dcol, &mut dx, c * self.q_in, self.q_in, &self.geom, ho, wo);
        }
        let db = self
            .bias
            .as_ref()
            .map(|_| (0..4 * self.q_out).map(|ch| dym[ch * cols..(ch + 1) * cols].iter().copied().sum()).collect());
        Ok((dx, dw, db))
    }

    /// The equivalent real convolution with the 4×4 signed block weight
    /// matrix written out explicitly (`4·q_out × 4·q_in` real channels).
    pub fn to_block_real_conv(&self) -> RealConvLayer<T> {
        let taps = self.geom.taps();
        let (qi, qo) = (self.q_in, self.q_out);
        let mut real = RealConvLayer::zeros(4 * qi, 4 * qo, self.geom, self.bias.is_some());
        for (o, row) in HAMILTON_TABLE.iter().enumerate() {
            for (c, &(src, sign)) in row.iter().enumerate() {
                let bank = self.bank(src);
                for m in 0..qo {
                    for i in 0..qi {
                        let from = (m * qi + i) * taps;
                        let to = ((o * qo + m) * 4 * qi + c * qi + i) * taps;
                        for t in 0..taps {
                            real.weight[to + t] = T::from_f64_lossy(sign as f64) * bank[from + t];
                        }
                    }
                }
            }
        }
        real.bias.clone_from(&self.bias);
        real
    }
}

/// Quaternion convolution of a single quaternion map.
pub fn qconv2d<T: Scalar>(layer: &QConvLayer<T>, x: &QTensor<T>) -> Result<QTensor<T>> {
    let batch = Tensor4::from_quaternions(std::slice::from_ref(x))?;
    layer.forward(&batch)?.quaternion_item(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::{hamilton, Quaternion};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut ChaCha8Rng, q: usize, h: usize, w: usize) -> QTensor<f64> {
        let data = (0..4 * q * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        QTensor::from_vec(q, h, w, data).unwrap()
    }

    /// Direct per-pixel Hamilton-product convolution.
    fn hamilton_loops(layer: &QConvLayer<f64>, x: &QTensor<f64>) -> QTensor<f64> {
        let g = layer.geom;
        let (ho, wo) = g.output_size(x.height(), x.width()).unwrap();
        let mut y = QTensor::zeros(layer.q_out, ho, wo);
        let taps = g.taps();
        for m in 0..layer.q_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = match &layer.bias {
                        Some(b) => Quaternion::new(b[m], b[layer.q_out + m], b[2 * layer.q_out + m], b[3 * layer.q_out + m]),
                        None => Quaternion::zero(),
                    };
                    for i in 0..layer.q_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= x.height() || ix as usize >= x.width() {
                                    continue;
                                }
                                let off = (m * layer.q_in + i) * taps + ky * g.kw + kx;
                                let w = Quaternion::new(
                                    layer.bank(0)[off],
                                    layer.bank(1)[off],
                                    layer.bank(2)[off],
                                    layer.bank(3)[off],
                                );
                                acc = acc.add(hamilton(w, x.get(i, iy as usize, ix as usize)));
                            }
                        }
                    }
                    y.set(m, oy, ox, acc);
                }
            }
        }
        y
    }

    #[test]
    fn zero_filters_give_zero() {
        let layer = QConvLayer::<f64>::zeros(2, 3, ConvGeometry::square(3, 1, 1), false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = qconv2d(&layer, &random_q(&mut rng, 2, 5, 5)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn real_unit_filter_is_identity() {
        let mut layer = QConvLayer::<f64>::zeros(1, 1, ConvGeometry::square(1, 1, 0), false);
        layer.bank_mut(0)[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_q(&mut rng, 1, 4, 3);
        assert_eq!(qconv2d(&layer, &x).unwrap(), x);
    }

    #[test]
    fn matches_hamilton_loops_and_block_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stride, pad) in [(1, 1), (2, 0), (1, 0)] {
            let layer = QConvLayer::init(2, 3, ConvGeometry::square(3, stride, pad), true, &mut rng);
            let mut bias = layer.clone();
            bias.bias = Some((0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
            let x = random_q(&mut rng, 2, 6, 7);
            let a = qconv2d(&bias, &x).unwrap();
            let b = hamilton_loops(&bias, &x);
            let c = bias.to_block_real_conv().forward(&Tensor4::from_quaternions(&[x.clone()]).unwrap()).unwrap();
            for ((u, v), w) in a.as_slice().iter().zip(b.as_slice()).zip(&c.data) {
                assert!((u - v).abs() <= 1e-10);
                assert!((u - w).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn quarter_of_real_parameters() {
        let q = QConvLayer::<f32>::zeros(3, 5, ConvGeometry::square(3, 1, 1), false);
        let r = RealConvLayer::<f32>::zeros(12, 20, ConvGeometry::square(3, 1, 1), false);
        assert_eq!(4 * q.param_count(), r.param_count());
        assert_eq!(q.to_block_real_conv().param_count(), r.param_count());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let layer = QConvLayer::<f32>::zeros(2, 1, ConvGeometry::square(3, 1, 1), false);
        assert!(matches!(qconv2d(&layer, &QTensor::zeros(1, 4, 4)), Err(Error::Shape(_))));
    }
}
