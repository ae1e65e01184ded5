use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Affine layer; `weights[i + in_dim * o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> FcLayer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.freq() * x.channels() != self.in_dim {
            return Err(Error::shape(format!(
                "fc expects {} features per example, got {}x{}",
                self.in_dim,
                x.freq(),
                x.channels()
            )));
        }
        Ok(())
    }
}

/// `y[:, b] = W^T x[:, b] + bias`; the input's `F x C` slab is treated as one
/// feature vector and the output is `out_dim x 1 x B`.
pub fn fc_forward<T: Real>(x: &Tensor<T>, layer: &FcLayer<T>) -> Result<Tensor<T>> {
    layer.check(x)?;
    let b = x.batch();
    let mut y = Tensor::from_fn(layer.out_dim, 1, b, |o, _, _| layer.bias[o]);
    T::gemm(
        layer.out_dim,
        layer.in_dim,
        b,
        &layer.weights,
        (layer.in_dim, 1),
        x.data(),
        (1, layer.in_dim),
        y.data_mut(),
        (1, layer.out_dim),
        true,
    );
    Ok(y)
}

pub fn fc_backward<T: Real>(
    x: &Tensor<T>,
    layer: &FcLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, FcGrads<T>)> {
    layer.check(x)?;
    let b = x.batch();
    if grad_out.shape() != [layer.out_dim, 1, b] {
        return Err(Error::shape(format!(
            "fc grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [layer.out_dim, 1, b]
        )));
    }
    let mut grads = FcGrads {
        weights: vec![T::zero(); layer.in_dim * layer.out_dim],
        bias: vec![T::zero(); layer.out_dim],
    };
    for bi in 0..b {
        for (acc, &g) in grads.bias.iter_mut().zip(grad_out.batch_slice(bi)) {
            *acc += g;
        }
    }
    // dW (in x out) = X (in x B) * G^T (B x out)
    T::gemm(
        layer.in_dim,
        b,
        layer.out_dim,
        x.data(),
        (1, layer.in_dim),
        grad_out.data(),
        (layer.out_dim, 1),
        &mut grads.weights,
        (1, layer.in_dim),
        false,
    );
    // dX (in x B) = W (in x out) * G (out x B)
    let mut dx = Tensor::zeros(x.freq(), x.channels(), b);
    T::gemm(
        layer.in_dim,
        layer.out_dim,
        b,
        &layer.weights,
        (1, layer.in_dim),
        grad_out.data(),
        (1, layer.out_dim),
        dx.data_mut(),
        (1, layer.in_dim),
        false,
    );
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;

    #[test]
    fn identity_weights() {
        let mut l = FcLayer::<f64>::zeros(3, 3);
        for i in 0..3 {
            l.weights[i + 3 * i] = 1.0;
        }
        let x = Tensor::from_vec(3, 1, 2, fd::random(6, 1)).unwrap();
        assert_eq!(fc_forward(&x, &l).unwrap(), x);
    }

    #[test]
    fn bias_gradient_is_batch_row_sum() {
        let l = FcLayer::<f64>::zeros(2, 3);
        let x = Tensor::zeros(2, 1, 2);
        let g = Tensor::from_vec(3, 1, 2, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let (_, grads) = fc_backward(&x, &l, &g).unwrap();
        assert_eq!(grads.bias, vec![11.0, 22.0, 33.0]);
    }

    #[test]
    fn shape_errors() {
        let l = FcLayer::<f64>::zeros(4, 2);
        assert!(fc_forward(&Tensor::zeros(3, 1, 1), &l).is_err());
        assert!(fc_backward(&Tensor::zeros(4, 1, 1), &l, &Tensor::zeros(3, 1, 1)).is_err());
    }

    #[test]
    fn finite_differences() {
        let (din, dout, b) = (6, 4, 3);
        let xv = fd::random(din * b, 5);
        let wv = fd::random(din * dout, 6);
        let bv = fd::random(dout, 7);
        let r = fd::random(dout * b, 8);
        let eval = |xv: &[f64], wv: &[f64], bv: &[f64]| {
            let x = Tensor::from_vec(din, 1, b, xv.to_vec()).unwrap();
            let l = FcLayer { in_dim: din, out_dim: dout, weights: wv.to_vec(), bias: bv.to_vec() };
            fd::probe(fc_forward(&x, &l).unwrap().data(), &r)
        };
        let x = Tensor::from_vec(din, 1, b, xv.clone()).unwrap();
        let l = FcLayer { in_dim: din, out_dim: dout, weights: wv.clone(), bias: bv.clone() };
        let g = Tensor::from_vec(dout, 1, b, r.clone()).unwrap();
        let (dx, grads) = fc_backward(&x, &l, &g).unwrap();
        let h = 1e-5;
        assert!(fd::max_rel_error(|p| eval(p, &wv, &bv), &xv, dx.data(), h) < 1e-6);
        assert!(fd::max_rel_error(|p| eval(&xv, p, &bv), &wv, &grads.weights, h) < 1e-6);
        assert!(fd::max_rel_error(|p| eval(&xv, &wv, p), &bv, &grads.bias, h) < 1e-6);
    }
}
