//! Quaternion scalars and quaternion-valued feature maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `r + i·i + j·j + k·k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion<T = f64> {
    pub r: T,
    pub i: T,
    pub j: T,
    pub k: T,
}

impl<T: Scalar> Quaternion<T> {
    pub fn new(r: T, i: T, j: T, k: T) -> Self {
        Self { r, i, j, k }
    }

    pub fn one() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn unit_i() -> Self {
        Self::new(T::zero(), T::one(), T::zero(), T::zero())
    }

    pub fn unit_j() -> Self {
        Self::new(T::zero(), T::zero(), T::one(), T::zero())
    }

    pub fn unit_k() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::one())
    }

    pub fn from_array(c: [T; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.r, self.i, self.j, self.k]
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.i.is_finite() && self.j.is_finite() && self.k.is_finite()
    }

    /// The real 4×4 matrix `L(m)` with `m ⊗ q = L(m) · q`.
    pub fn left_matrix(&self) -> [[T; 4]; 4] {
        let Quaternion { r, i, j, k } = *self;
        [
            [r, -i, -j, -k],
            [i, r, -k, j],
            [j, k, r, -i],
            [k, -j, i, r],
        ]
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.r + o.r, self.i + o.i, self.j + o.j, self.k + o.k)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.r * s, self.i * s, self.j * s, self.k * s)
    }
}

/// Hamilton product without the finiteness check.
#[inline]
pub(crate) fn hamilton<T: Scalar>(m: Quaternion<T>, q: Quaternion<T>) -> Quaternion<T> {
    Quaternion {
        r: m.r * q.r - m.i * q.i - m.j * q.j - m.k * q.k,
        i: m.i * q.r + m.r * q.i - m.k * q.j + m.j * q.k,
        j: m.j * q.r + m.k * q.i + m.r * q.j - m.i * q.k,
        k: m.k * q.r - m.j * q.i + m.i * q.j + m.r * q.k,
    }
}

/// Hamilton product `m ⊗ q`.
pub fn hamilton_product<T: Scalar>(m: Quaternion<T>, q: Quaternion<T>) -> Result<Quaternion<T>> {
    if !m.is_finite() || !q.is_finite() {
        return Err(Error::invalid("hamilton product of a non-finite quaternion"));
    }
    Ok(hamilton(m, q))
}

impl<T: Scalar> std::ops::Mul for Quaternion<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        hamilton(self, rhs)
    }
}

/// Output component `o` of the Hamilton product takes, for input component
/// `c`, the filter component `HAMILTON_TABLE[o][c].0` with sign
/// `HAMILTON_TABLE[o][c].1`. Component order is R, I, J, K.
pub const HAMILTON_TABLE: [[(usize, i8); 4]; 4] = [
    [(0, 1), (1, -1), (2, -1), (3, -1)],
    [(1, 1), (0, 1), (3, -1), (2, 1)],
    [(2, 1), (3, 1), (0, 1), (1, -1)],
    [(3, 1), (2, -1), (1, 1), (0, 1)],
];

/// A quaternion feature map of `channels × height × width` quaternions,
/// stored as four contiguous real planes in R, I, J, K order.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Scale,
    AbsSum,
}

impl<T: Scalar> QTensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); 4 * channels * height * width],
        }
    }

    /// Builds from four planes of `channels × height × width` values each.
    pub fn from_planes(
        channels: usize,
        height: usize,
        width: usize,
        planes: [Vec<T>; 4],
    ) -> Result<Self> {
        let n = channels * height * width;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::shape(format!(
                "every plane must hold {n} elements ({channels}x{height}x{width})"
            )));
        }
        let mut data = Vec::with_capacity(4 * n);
        for p in planes {
            data.extend(p);
        }
        Ok(Self { channels, height, width, data })
    }

    /// Builds from plane-major data of length `4 × channels × height × width`.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != 4 * channels * height * width {
            return Err(Error::shape(format!(
                "expected {} values for a {channels}x{height}x{width} quaternion map, got {}",
                4 * channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Plane `p` (0 = R, 1 = I, 2 = J, 3 = K).
    pub fn plane(&self, p: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn plane_mut(&mut self, p: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[p * n..(p + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> Quaternion<T> {
        let n = self.plane_len();
        let idx = (c * self.height + y) * self.width + x;
        Quaternion::new(
            self.data[idx],
            self.data[n + idx],
            self.data[2 * n + idx],
            self.data[3 * n + idx],
        )
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, q: Quaternion<T>) {
        let n = self.plane_len();
        let idx = (c * self.height + y) * self.width + x;
        self.data[idx] = q.r;
        self.data[n + idx] = q.i;
        self.data[2 * n + idx] = q.j;
        self.data[3 * n + idx] = q.k;
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "quaternion map shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(self.with_data(data))
    }

    pub fn scale(&self, s: T) -> Self {
        self.with_data(self.data.iter().map(|&v| v * s).collect())
    }

    /// Σ |x| over all four planes.
    pub fn abs_sum(&self) -> T {
        self.data.iter().map(|v| v.abs()).sum()
    }

    fn with_data(&self, data: Vec<T>) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Result of [`qtensor_elementwise`].
#[derive(Debug, Clone, PartialEq)]
pub enum ElementwiseResult<T> {
    Tensor(QTensor<T>),
    Scalar(T),
}

/// Operand accepted by [`qtensor_elementwise`].
pub enum Operand<'a, T> {
    Tensor(&'a QTensor<T>),
    Scalar(T),
    None,
}

/// Dispatches the component-wise operations by name.
pub fn qtensor_elementwise<T: Scalar>(
    op: ElementwiseOp,
    a: &QTensor<T>,
    b: Operand<'_, T>,
) -> Result<ElementwiseResult<T>> {
    match (op, b) {
        (ElementwiseOp::Add, Operand::Tensor(b)) => a.add(b).map(ElementwiseResult::Tensor),
        (ElementwiseOp::Scale, Operand::Scalar(s)) => Ok(ElementwiseResult::Tensor(a.scale(s))),
        (ElementwiseOp::AbsSum, _) => Ok(ElementwiseResult::Scalar(a.abs_sum())),
        (op, _) => Err(Error::invalid(format!("operand kind does not fit {op:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Q = Quaternion<f64>;

    fn matrix_form(m: Q, q: Q) -> Q {
        // Row-by-row evaluation of the signed 4x4 matrix, written out in full.
        let mat = [
            [m.r, -m.i, -m.j, -m.k],
            [m.i, m.r, -m.k, m.j],
            [m.j, m.k, m.r, -m.i],
            [m.k, -m.j, m.i, m.r],
        ];
        let v = [q.r, q.i, q.j, q.k];
        let mut out = [0.0; 4];
        for (row, o) in mat.iter().zip(out.iter_mut()) {
            *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        }
        Q::from_array(out)
    }

    fn random_q(rng: &mut ChaCha8Rng) -> Q {
        Q::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        )
    }

    #[test]
    fn identity_and_basis() {
        let q = Q::new(1.5, -2.0, 0.25, 7.0);
        assert_eq!(hamilton_product(Q::one(), q).unwrap(), q);
        assert_eq!(hamilton_product(Q::unit_i(), Q::unit_j()).unwrap(), Q::unit_k());
        let minus_one = Q::new(-1.0, 0.0, 0.0, 0.0);
        for e in [Q::unit_i(), Q::unit_j(), Q::unit_k()] {
            assert_eq!(hamilton_product(e, e).unwrap(), minus_one);
        }
        let ij = hamilton_product(Q::unit_i(), Q::unit_j()).unwrap();
        let ji = hamilton_product(Q::unit_j(), Q::unit_i()).unwrap();
        assert_eq!(ij, ji.scale(-1.0));
    }

    #[test]
    fn worked_product() {
        let p = hamilton_product(Q::new(1.0, 2.0, 3.0, 4.0), Q::new(5.0, 6.0, 7.0, 8.0)).unwrap();
        assert_eq!(p, Q::new(-60.0, 12.0, 30.0, 24.0));
    }

    #[test]
    fn rejects_non_finite() {
        let bad = Q::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(hamilton_product(bad, Q::one()), Err(Error::InvalidArgument(_))));
        let inf = Q::new(0.0, f64::INFINITY, 0.0, 0.0);
        assert!(hamilton_product(Q::one(), inf).is_err());
    }

    #[test]
    fn matches_matrix_form_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (m, q) = (random_q(&mut rng), random_q(&mut rng));
            let a = hamilton_product(m, q).unwrap();
            let b = matrix_form(m, q);
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn associative_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (a, b, c) = (random_q(&mut rng), random_q(&mut rng), random_q(&mut rng));
            let l = (a * b) * c;
            let r = a * (b * c);
            let scale = l.to_array().iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (x, y) in l.to_array().iter().zip(r.to_array()) {
                assert!((x - y).abs() / scale <= 1e-10);
            }
        }
    }

    #[test]
    fn table_agrees_with_left_matrix() {
        let m = Q::new(1.0, 2.0, 3.0, 4.0);
        let comps = m.to_array();
        let lm = m.left_matrix();
        for o in 0..4 {
            for c in 0..4 {
                let (src, sign) = HAMILTON_TABLE[o][c];
                assert_eq!(lm[o][c], sign as f64 * comps[src]);
            }
        }
    }

    #[test]
    fn elementwise_examples() {
        let z = QTensor::<f64>::zeros(1, 1, 2);
        match qtensor_elementwise(ElementwiseOp::Add, &z, Operand::Tensor(&z)).unwrap() {
            ElementwiseResult::Tensor(t) => assert_eq!(t, z),
            _ => panic!(),
        }
        let t = QTensor::from_vec(1, 1, 2, vec![1.0, -3.0, 0.5, 2.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(t.scale(1.0), t);
        let neg = QTensor::from_vec(1, 1, 2, vec![-1.0f64; 8]).unwrap();
        assert_eq!(neg.abs_sum(), 8.0);
        match qtensor_elementwise(ElementwiseOp::AbsSum, &neg, Operand::None).unwrap() {
            ElementwiseResult::Scalar(s) => assert_eq!(s, 8.0),
            _ => panic!(),
        }
        let other = QTensor::<f64>::zeros(1, 2, 2);
        assert!(matches!(z.add(&other), Err(Error::Shape(_))));
    }

    #[test]
    fn accessors_use_plane_layout() {
        let mut t = QTensor::<f32>::zeros(2, 2, 3);
        t.set(1, 1, 2, Quaternion::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(t.get(1, 1, 2), Quaternion::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(t.plane(2)[11], 3.0);
        assert_eq!(t.plane(0).len(), 12);
        assert!(QTensor::from_planes(1, 1, 2, [vec![0.0f32; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 3]])
            .is_err());
    }

    proptest! {
        #[test]
        fn norm_is_multiplicative(a in proptest::array::uniform4(-3.0f64..3.0), b in proptest::array::uniform4(-3.0f64..3.0)) {
            let (qa, qb) = (Q::from_array(a), Q::from_array(b));
            let n = |q: Q| q.to_array().iter().map(|v| v * v).sum::<f64>();
            let lhs = n(qa * qb);
            let rhs = n(qa) * n(qb);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }
    }
}
