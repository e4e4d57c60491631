use crate::quat::QTensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
}

pub(crate) fn relu_in_place<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero();
        }
    });
}

/// Passes the gradient where the forward output was positive.
pub(crate) fn relu_backward<T: Scalar>(output: &[T], dy: &mut [T]) {
    for (g, &y) in dy.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Applies the activation to each quaternion component independently.
pub fn split_activation<T: Scalar>(x: &QTensor<T>, kind: ActivationKind) -> QTensor<T> {
    match kind {
        ActivationKind::Relu => {
            let (c, h, w) = x.shape();
            let mut data = x.as_slice().to_vec();
            relu_in_place(&mut data);
            QTensor::from_vec(c, h, w, data).expect("shape preserved")
        }
    }
}
