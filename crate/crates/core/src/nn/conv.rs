use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// 1-D convolution along frequency. Input channels are either feature maps or,
/// for the first layer, the stacked time frames, so each filter spans the whole
/// time context.
///
/// `weights[k + width * (ci + c_in * co)]`; same-padding of `(width - 1) / 2`
/// zeros on each side (for even widths the extra tap falls on the right).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

const BATCH_CHUNK: usize = 8;

/// Output positions `lo..hi` whose tap `k` reads inside the input (`0 <= i + k - pad < f`).
fn valid_range(f: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).min(f);
    let hi = (f + pad).saturating_sub(k).min(f).max(lo);
    (lo, hi)
}

/// How the correlation is lowered to matrix products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Lowering {
    /// Unrolled input patches for the whole batch times the filter bank.
    Im2col,
    /// Banded `(F c_out) x (F c_in)` operator applied to all batch columns.
    Toeplitz,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(width: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            width,
            c_in,
            c_out,
            weights: vec![T::zero(); width * c_in * c_out],
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn weight_count(&self) -> usize {
        self.width * self.c_in * self.c_out
    }

    #[inline]
    pub fn weight_index(&self, k: usize, ci: usize, co: usize) -> usize {
        k + self.width * (ci + self.c_in * co)
    }

    fn pad(&self) -> usize {
        (self.width - 1) / 2
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        Ok(())
    }

    fn lowering(&self, f: usize) -> Lowering {
        if 2 * self.width > f {
            Lowering::Toeplitz
        } else {
            Lowering::Im2col
        }
    }

    /// Writes the patches of batch element `b` into rows `f * b ..` of a
    /// column-major `(F B) x (width c_in)` matrix with column stride `ld`.
    fn im2col(&self, x: &[T], f: usize, b: usize, ld: usize, col: &mut [T]) {
        let pad = self.pad();
        for ci in 0..self.c_in {
            let src = &x[ci * f..(ci + 1) * f];
            for k in 0..self.width {
                let start = (k + self.width * ci) * ld + f * b;
                let dst = &mut col[start..start + f];
                // dst[i] = src[i + k - pad]
                let (lo, hi) = valid_range(f, k, pad);
                dst[..lo].fill(T::zero());
                dst[hi..].fill(T::zero());
                if lo < hi {
                    dst[lo..hi].copy_from_slice(&src[lo + k - pad..hi + k - pad]);
                }
            }
        }
    }

    fn col2im(&self, col: &[T], f: usize, b: usize, ld: usize, dx: &mut [T]) {
        let pad = self.pad();
        for ci in 0..self.c_in {
            let dst = &mut dx[ci * f..(ci + 1) * f];
            for k in 0..self.width {
                let start = (k + self.width * ci) * ld + f * b;
                let src = &col[start..start + f];
                let (lo, hi) = valid_range(f, k, pad);
                if lo == hi {
                    continue;
                }
                dst[lo + k - pad..hi + k - pad]
                    .iter_mut()
                    .zip(&src[lo..hi])
                    .for_each(|(d, &s)| *d += s);
            }
        }
    }

    /// Column-major `(F c_out) x (F c_in)` matrix `A` with `y = A x` per batch column.
    fn toeplitz(&self, f: usize) -> Vec<T> {
        let rows = f * self.c_out;
        let mut a = vec![T::zero(); rows * f * self.c_in];
        let pad = self.pad();
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                for i in 0..f {
                    let r = i + f * co;
                    for k in 0..self.width {
                        let j = i + k;
                        if j >= pad && j - pad < f {
                            a[r + rows * (j - pad + f * ci)] = self.weights[self.weight_index(k, ci, co)];
                        }
                    }
                }
            }
        }
        a
    }
}

pub fn conv1d_forward<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    layer.check_input(x)?;
    conv1d_forward_with(x, layer, layer.lowering(x.freq()))
}

pub(crate) fn conv1d_forward_with<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>, how: Lowering) -> Result<Tensor<T>> {
    layer.check_input(x)?;
    let [f, _, b] = x.shape();
    let c_out = layer.c_out;
    let mut out = Tensor::zeros(f, c_out, b);
    for y in out.data_mut().chunks_exact_mut(f * c_out) {
        for (co, chunk) in y.chunks_exact_mut(f).enumerate() {
            chunk.fill(layer.bias[co]);
        }
    }
    match how {
        Lowering::Toeplitz => {
            let (rows, cols) = (f * c_out, f * layer.c_in);
            let a = layer.toeplitz(f);
            T::gemm(rows, cols, b, &a, (1, rows), x.data(), (1, cols), out.data_mut(), (1, rows), true);
        }
        Lowering::Im2col => {
            let kdim = layer.width * layer.c_in;
            let data = out.data_mut();
            for b0 in (0..b).step_by(BATCH_CHUNK) {
                let nb = BATCH_CHUNK.min(b - b0);
                let fb = f * nb;
                let mut col = vec![T::zero(); fb * kdim];
                for bi in 0..nb {
                    layer.im2col(x.batch_slice(b0 + bi), f, bi, fb, &mut col);
                }
                let mut tmp = vec![T::zero(); fb * c_out];
                T::gemm(fb, kdim, c_out, &col, (1, fb), &layer.weights, (1, kdim), &mut tmp, (1, fb), false);
                for bi in 0..nb {
                    for co in 0..c_out {
                        let src = &tmp[co * fb + bi * f..co * fb + (bi + 1) * f];
                        let o = (co + c_out * (b0 + bi)) * f;
                        data[o..o + f].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`] with respect to its input and parameters.
pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    layer.check_input(x)?;
    conv1d_backward_with(x, layer, grad_out, layer.lowering(x.freq()))
}

pub(crate) fn conv1d_backward_with<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    how: Lowering,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    layer.check_input(x)?;
    let [f, c_in, b] = x.shape();
    let c_out = layer.c_out;
    if grad_out.shape() != [f, c_out, b] {
        return Err(Error::shape(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [f, c_out, b]
        )));
    }
    let mut grads = ConvGrads {
        weights: vec![T::zero(); layer.weight_count()],
        bias: vec![T::zero(); c_out],
    };
    for g in grad_out.data().chunks_exact(f * c_out) {
        for (co, chunk) in g.chunks_exact(f).enumerate() {
            grads.bias[co] += chunk.iter().copied().sum::<T>();
        }
    }
    let mut dx = Tensor::zeros(f, c_in, b);
    match how {
        Lowering::Toeplitz => {
            let (rows, cols) = (f * c_out, f * c_in);
            let a = layer.toeplitz(f);
            // dx = A^T g
            T::gemm(cols, rows, b, &a, (rows, 1), grad_out.data(), (1, rows), dx.data_mut(), (1, cols), false);
            // dA = g x^T, folded back onto the band
            let mut da = vec![T::zero(); rows * cols];
            T::gemm(rows, b, cols, grad_out.data(), (1, rows), x.data(), (cols, 1), &mut da, (1, rows), false);
            let pad = layer.pad();
            for co in 0..c_out {
                for ci in 0..c_in {
                    for k in 0..layer.width {
                        let mut acc = T::zero();
                        for i in 0..f {
                            let j = i + k;
                            if j >= pad && j - pad < f {
                                acc += da[i + f * co + rows * (j - pad + f * ci)];
                            }
                        }
                        grads.weights[layer.weight_index(k, ci, co)] = acc;
                    }
                }
            }
        }
        Lowering::Im2col => {
            let kdim = layer.width * c_in;
            for b0 in (0..b).step_by(BATCH_CHUNK) {
                let nb = BATCH_CHUNK.min(b - b0);
                let fb = f * nb;
                let mut col = vec![T::zero(); fb * kdim];
                let mut gt = vec![T::zero(); fb * c_out];
                for bi in 0..nb {
                    layer.im2col(x.batch_slice(b0 + bi), f, bi, fb, &mut col);
                    let g = grad_out.batch_slice(b0 + bi);
                    for co in 0..c_out {
                        gt[co * fb + bi * f..co * fb + (bi + 1) * f].copy_from_slice(&g[co * f..(co + 1) * f]);
                    }
                }
                // dW (kdim x c_out) += col^T (kdim x FB) * gt (FB x c_out)
                T::gemm(kdim, fb, c_out, &col, (fb, 1), &gt, (1, fb), &mut grads.weights, (1, kdim), true);
                // dcol (FB x kdim) = gt (FB x c_out) * W^T (c_out x kdim)
                T::gemm(fb, c_out, kdim, &gt, (1, fb), &layer.weights, (kdim, 1), &mut col, (1, fb), false);
                for bi in 0..nb {
                    layer.col2im(&col, f, bi, fb, dx.batch_slice_mut(b0 + bi));
                }
            }
        }
    }
    Ok((dx, grads))
}
