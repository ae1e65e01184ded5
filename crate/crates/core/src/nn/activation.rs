use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
    y
}

/// Passes the gradient where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu input {:?} vs grad {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let mut dx = grad_out.clone();
    dx.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &v)| {
            if v <= T::zero() {
                *g = T::zero();
            }
        });
    Ok(dx)
}
