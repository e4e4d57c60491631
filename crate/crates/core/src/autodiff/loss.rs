use super::{Logits, TapeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor4};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// A scalar loss and its gradient with respect to the logits it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Matrix<T>,
    tape: Option<TapeId>,
}

impl<T: Scalar> Loss<T> {
    /// A loss with an explicit gradient, bound to `logits`.
    pub fn custom(logits: &Logits<T>, value: T, grad: Matrix<T>) -> Result<Self> {
        if (grad.rows, grad.cols) != (logits.values.rows, logits.values.cols) {
            return Err(Error::shape("loss gradient must match the logits shape"));
        }
        Ok(Self { value, grad, tape: logits.tape_id() })
    }

    /// A loss that does not depend on the logits.
    pub fn constant(logits: &Logits<T>, value: T) -> Self {
        Self {
            value,
            grad: Matrix::zeros(logits.values.rows, logits.values.cols),
            tape: logits.tape_id(),
        }
    }

    pub fn tape_id(&self) -> Option<TapeId> {
        self.tape
    }

    /// `wa·a + wb·b`; both must come from the same logits.
    pub fn weighted_sum(a: &Self, wa: T, b: &Self, wb: T) -> Result<Self> {
        if a.tape != b.tape || a.grad.data.len() != b.grad.data.len() {
            return Err(Error::invalid("cannot combine losses of different logits"));
        }
        let grad = a.grad.data.iter().zip(&b.grad.data).map(|(&x, &y)| wa * x + wb * y).collect();
        Ok(Self {
            value: wa * a.value + wb * b.value,
            grad: Matrix::from_vec(a.grad.rows, a.grad.cols, grad)?,
            tape: a.tape,
        })
    }
}

pub fn log_softmax_rows<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let mut out = z.clone();
    for r in 0..z.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

pub fn softmax_rows<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let mut out = log_softmax_rows(z);
    out.data.iter_mut().for_each(|v| *v = v.exp());
    out
}

fn check_labels<T: Scalar>(z: &Matrix<T>, y: &Matrix<T>) -> Result<()> {
    if (z.rows, z.cols) != (y.rows, y.cols) {
        return Err(Error::shape(format!(
            "logits are {}x{}, labels {}x{}",
            z.rows, z.cols, y.rows, y.cols
        )));
    }
    if z.rows == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

fn softmax_ce<T: Scalar>(z: &Logits<T>, y: &Matrix<T>) -> Result<Loss<T>> {
    let n = T::from_usize(z.values.rows).unwrap();
    let logp = log_softmax_rows(&z.values);
    let value = -logp.data.iter().zip(&y.data).map(|(&l, &t)| if t == T::zero() { T::zero() } else { t * l }).sum::<T>() / n;
    let grad = logp
        .data
        .iter()
        .zip(&y.data)
        .map(|(&l, &t)| (l.exp() - t) / n)
        .collect();
    Loss::custom(z, value, Matrix::from_vec(y.rows, y.cols, grad)?)
}

/// Mean over the batch of `−Σ_g y_g log softmax(z)_g` for one-hot `y`.
pub fn cross_entropy<T: Scalar>(z: &Logits<T>, y: &Matrix<T>) -> Result<Loss<T>> {
    check_labels(&z.values, y)?;
    for r in 0..y.rows {
        let row = y.row(r);
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::invalid(format!("label row {r} is not one-hot")));
        }
    }
    softmax_ce(z, y)
}

/// Cross-entropy against soft targets (e.g. mixup labels); rows must be
/// non-negative and sum to 1.
pub fn soft_cross_entropy<T: Scalar>(z: &Logits<T>, y: &Matrix<T>) -> Result<Loss<T>> {
    check_labels(&z.values, y)?;
    check_distribution(y, "target")?;
    softmax_ce(z, y)
}

/// Mean over all elements of per-class sigmoid binary cross-entropy.
pub fn binary_cross_entropy_with_logits<T: Scalar>(z: &Logits<T>, y: &Matrix<T>) -> Result<Loss<T>> {
    check_labels(&z.values, y)?;
    if y.data.iter().any(|&t| t < T::zero() || t > T::one()) {
        return Err(Error::invalid("binary targets must lie in [0, 1]"));
    }
    let count = T::from_usize(y.data.len()).unwrap();
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(y.data.len());
    for (&x, &t) in z.values.data.iter().zip(&y.data) {
        // log(1 + e^x) evaluated stably.
        let softplus = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
        value += softplus - t * x;
        let sig = T::one() / (T::one() + (-x).exp());
        grad.push((sig - t) / count);
    }
    Loss::custom(z, value / count, Matrix::from_vec(y.rows, y.cols, grad)?)
}

fn check_distribution<T: Scalar>(p: &Matrix<T>, what: &str) -> Result<()> {
    let tol = 1e-6;
    for r in 0..p.rows {
        let row = p.row(r);
        if row.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::invalid(format!("{what} row {r} has negative or non-finite entries")));
        }
        let s = row.iter().copied().sum::<T>().to_f64_lossy();
        if (s - 1.0).abs() > tol {
            return Err(Error::invalid(format!("{what} row {r} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Mean over rows of `Σ_g p_t log(p_t / p_s)`, with `0·log(0/·) = 0`.
pub fn kl_divergence<T: Scalar>(p_teacher: &Matrix<T>, p_student: &Matrix<T>) -> Result<T> {
    if (p_teacher.rows, p_teacher.cols) != (p_student.rows, p_student.cols) {
        return Err(Error::shape("teacher and student distributions differ in shape"));
    }
    if p_teacher.rows == 0 {
        return Err(Error::invalid("empty batch"));
    }
    check_distribution(p_teacher, "teacher")?;
    check_distribution(p_student, "student")?;
    let mut total = T::zero();
    for (&t, &s) in p_teacher.data.iter().zip(&p_student.data) {
        if t == T::zero() {
            continue;
        }
        if s == T::zero() {
            return Err(Error::Divergence(
                "student assigns zero probability where the teacher does not".into(),
            ));
        }
        total += t * (t / s).ln();
    }
    Ok(total / T::from_usize(p_teacher.rows).unwrap())
}

/// `λ·a + (1−λ)·b` for inputs and labels alike.
pub fn mixup<T: Scalar>(
    batch_a: &Tensor4<T>,
    batch_b: &Tensor4<T>,
    labels_a: &Matrix<T>,
    labels_b: &Matrix<T>,
    lambda: T,
) -> Result<(Tensor4<T>, Matrix<T>)> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::invalid(format!("mixup lambda {lambda} is outside [0, 1]")));
    }
    if !batch_a.same_shape(batch_b) || (labels_a.rows, labels_a.cols) != (labels_b.rows, labels_b.cols) {
        return Err(Error::shape("mixup operands differ in shape"));
    }
    if labels_a.rows != batch_a.n {
        return Err(Error::shape("label rows do not match the batch size"));
    }
    let mix = |a: &[T], b: &[T]| -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| lambda * x + (T::one() - lambda) * y).collect()
    };
    let x = Tensor4::from_vec(batch_a.n, batch_a.c, batch_a.h, batch_a.w, mix(&batch_a.data, &batch_b.data))?;
    let y = Matrix::from_vec(labels_a.rows, labels_a.cols, mix(&labels_a.data, &labels_b.data))?;
    Ok((x, y))
}

/// Draws the mixing weight from Beta(1, 1).
pub fn sample_mixup_lambda<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Beta::new(1.0, 1.0).expect("valid beta parameters").sample(rng)
}
