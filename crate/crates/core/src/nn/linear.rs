//! Fully-connected layers: real and quaternion.

use super::conv::uniform_init;
use crate::error::{Error, Result};
use crate::quat::{hamilton_product, Quaternion, HAMILTON_TABLE};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use rand::Rng;

/// `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn zeros(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: bias.then(|| vec![T::zero(); out_features]),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        let mut l = Self::zeros(in_features, out_features, bias);
        l.weight = uniform_init(rng, l.weight.len(), in_features);
        l
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn check(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols != self.in_features {
            return Err(Error::shape(format!(
                "linear layer expects {} features, got {}",
                self.in_features, x.cols
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(x)?;
        let mut y = Matrix::zeros(x.rows, self.out_features);
        if let Some(b) = &self.bias {
            for r in 0..x.rows {
                y.row_mut(r).copy_from_slice(b);
            }
        }
        let (i, o) = (self.in_features, self.out_features);
        T::gemm(x.rows, i, o, T::one(), &x.data, (i, 1), &self.weight, (1, i), T::one(), &mut y.data, (o, 1));
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Option<Vec<T>>)> {
        self.check(x)?;
        if dy.rows != x.rows || dy.cols != self.out_features {
            return Err(Error::shape("linear output gradient has the wrong shape"));
        }
        let (i, o, n) = (self.in_features, self.out_features, x.rows);
        let mut dw = vec![T::zero(); o * i];
        T::gemm(o, n, i, T::one(), &dy.data, (1, o), &x.data, (i, 1), T::zero(), &mut dw, (i, 1));
        let mut dx = Matrix::zeros(n, i);
        T::gemm(n, o, i, T::one(), &dy.data, (o, 1), &self.weight, (i, 1), T::zero(), &mut dx.data, (i, 1));
        let db = self
            .bias
            .as_ref()
            .map(|_| (0..o).map(|c| (0..n).map(|r| dy.get(r, c)).sum()).collect());
        Ok((dx, dw, db))
    }
}

/// Quaternion fully-connected layer.
///
/// Input rows are plane-major quaternion vectors (`4·q_in` reals, all R
/// components first). `weight` holds four banks of `q_out × q_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct QLinearLayer<T> {
    pub q_in: usize,
    pub q_out: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> QLinearLayer<T> {
    pub fn zeros(q_in: usize, q_out: usize, bias: bool) -> Self {
        Self {
            q_in,
            q_out,
            weight: vec![T::zero(); 4 * q_in * q_out],
            bias: bias.then(|| vec![T::zero(); 4 * q_out]),
        }
    }

    pub fn init<R: Rng + ?Sized>(q_in: usize, q_out: usize, bias: bool, rng: &mut R) -> Self {
        let mut l = Self::zeros(q_in, q_out, bias);
        l.weight = uniform_init(rng, l.weight.len(), 4 * q_in);
        l
    }

    pub fn bank(&self, component: usize) -> &[T] {
        let n = self.q_in * self.q_out;
        &self.weight[component * n..(component + 1) * n]
    }

    pub fn bank_mut(&mut self, component: usize) -> &mut [T] {
        let n = self.q_in * self.q_out;
        &mut self.weight[component * n..(component + 1) * n]
    }

    pub fn weight_quaternion(&self, o: usize, i: usize) -> Quaternion<T> {
        let idx = o * self.q_in + i;
        Quaternion::new(self.bank(0)[idx], self.bank(1)[idx], self.bank(2)[idx], self.bank(3)[idx])
    }

    pub fn set_weight_quaternion(&mut self, o: usize, i: usize, q: Quaternion<T>) {
        let idx = o * self.q_in + i;
        for (c, v) in q.to_array().into_iter().enumerate() {
            self.bank_mut(c)[idx] = v;
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn check(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols != 4 * self.q_in {
            return Err(Error::shape(format!(
                "quaternion linear layer expects {} quaternions ({} reals), got {} reals",
                self.q_in,
                4 * self.q_in,
                x.cols
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(x)?;
        let (qi, qo, n) = (self.q_in, self.q_out, x.rows);
        let mut y = Matrix::zeros(n, 4 * qo);
        if let Some(b) = &self.bias {
            for r in 0..n {
                y.row_mut(r).copy_from_slice(b);
            }
        }
        for (o, row) in HAMILTON_TABLE.iter().enumerate() {
            for (c, &(src, sign)) in row.iter().enumerate() {
                T::gemm(
                    n,
                    qi,
                    qo,
                    T::from_f64_lossy(sign as f64),
                    &x.data[c * qi..],
                    (4 * qi, 1),
                    self.bank(src),
                    (1, qi),
                    T::one(),
                    &mut y.data[o * qo..],
                    (4 * qo, 1),
                );
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Option<Vec<T>>)> {
        self.check(x)?;
        let (qi, qo, n) = (self.q_in, self.q_out, x.rows);
        if dy.rows != n || dy.cols != 4 * qo {
            return Err(Error::shape("quaternion linear output gradient has the wrong shape"));
        }
        let bank = qi * qo;
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut dx = Matrix::zeros(n, 4 * qi);
        for (o, row) in HAMILTON_TABLE.iter().enumerate() {
            for (c, &(src, sign)) in row.iter().enumerate() {
                let s = T::from_f64_lossy(sign as f64);
                T::gemm(
                    qo,
                    n,
                    qi,
                    s,
                    &dy.data[o * qo..],
                    (1, 4 * qo),
                    &x.data[c * qi..],
                    (4 * qi, 1),
                    T::one(),
                    &mut dw[src * bank..(src + 1) * bank],
                    (qi, 1),
                );
                T::gemm(n, qo, qi, s, &dy.data[o * qo..], (4 * qo, 1), self.bank(src), (qi, 1), T::one(), &mut dx.data[c * qi..], (4 * qi, 1));
            }
        }
        let db = self
            .bias
            .as_ref()
            .map(|_| (0..4 * qo).map(|c| (0..n).map(|r| dy.get(r, c)).sum()).collect());
        Ok((dx, dw, db))
    }
}

/// Applies a quaternion linear map to one quaternion vector.
pub fn qlinear<T: Scalar>(layer: &QLinearLayer<T>, x: &[Quaternion<T>]) -> Result<Vec<Quaternion<T>>> {
    if x.len() != layer.q_in {
        return Err(Error::shape(format!(
            "quaternion vector of length {} does not match q_in = {}",
            x.len(),
            layer.q_in
        )));
    }
    for q in x {
        hamilton_product(Quaternion::one(), *q)?;
    }
    let mut row = vec![T::zero(); 4 * layer.q_in];
    for (i, q) in x.iter().enumerate() {
        for (c, v) in q.to_array().into_iter().enumerate() {
            row[c * layer.q_in + i] = v;
        }
    }
    let y = layer.forward(&Matrix::from_vec(1, 4 * layer.q_in, row)?)?;
    let qo = layer.q_out;
    Ok((0..qo)
        .map(|o| Quaternion::new(y.data[o], y.data[qo + o], y.data[2 * qo + o], y.data[3 * qo + o]))
        .collect())
}
