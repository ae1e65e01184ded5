use crate::error::{Error, Result};
use crate::nn::Real;

/// Dense `F x C x B` array, frequency fastest, then channel, then batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(f: usize, c: usize, b: usize) -> Self {
        Self {
            shape: [f, c, b],
            data: vec![T::zero(); f * c * b],
        }
    }

    pub fn from_vec(f: usize, c: usize, b: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != f * c * b {
            return Err(Error::shape(format!(
                "{} values for a {f}x{c}x{b} tensor",
                data.len()
            )));
        }
        Ok(Self {
            shape: [f, c, b],
            data,
        })
    }

    pub fn from_fn(f: usize, c: usize, b: usize, mut g: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(f * c * b);
        for bi in 0..b {
            for ci in 0..c {
                for fi in 0..f {
                    data.push(g(fi, ci, bi));
                }
            }
        }
        Self {
            shape: [f, c, b],
            data,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn freq(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn batch(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, f: usize, c: usize, b: usize) -> usize {
        f + self.shape[0] * (c + self.shape[1] * b)
    }

    #[inline]
    pub fn at(&self, f: usize, c: usize, b: usize) -> T {
        self.data[self.index(f, c, b)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, c: usize, b: usize, v: T) {
        let i = self.index(f, c, b);
        self.data[i] = v;
    }

    /// Contiguous `F x C` slab of one batch element.
    pub fn batch_slice(&self, b: usize) -> &[T] {
        let n = self.shape[0] * self.shape[1];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn batch_slice_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[0] * self.shape[1];
        &mut self.data[b * n..(b + 1) * n]
    }

    /// One channel of one batch element.
    pub fn column(&self, c: usize, b: usize) -> &[T] {
        let start = self.index(0, c, b);
        &self.data[start..start + self.shape[0]]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Mean squared error over every element and its gradient with respect to `pred`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = T::from_usize(pred.len().max(1)).unwrap();
    let two = T::one() + T::one();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        loss += d * d;
        grad.push(two * d / n);
    }
    let [f, c, b] = pred.shape();
    Ok((loss / n, Tensor::from_vec(f, c, b, grad)?))
}
