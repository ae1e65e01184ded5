use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Output extent of width-2 stride-2 pooling with the odd trailing element
/// carried through.
pub fn pooled_len(f: usize) -> usize {
    f.div_ceil(2)
}

/// Max over non-overlapping pairs along frequency. Returns the pooled tensor
/// and, per output element, the source frequency index (ties go to the lower
/// index).
pub fn maxpool_freq_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [f, c, b] = x.shape();
    let fo = pooled_len(f);
    let mut y = Tensor::zeros(fo, c, b);
    let mut arg = Vec::with_capacity(fo * c * b);
    for bi in 0..b {
        for ci in 0..c {
            let col = x.column(ci, bi);
            let start = y.index(0, ci, bi);
            for o in 0..fo {
                let i = 2 * o;
                let pick = if i + 1 < f && col[i + 1] > col[i] { i + 1 } else { i };
                y.data_mut()[start + o] = col[pick];
                arg.push(pick as u32);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_freq_backward<T: Real>(
    argmax: &[u32],
    input_f: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [fo, c, b] = grad_out.shape();
    if fo != pooled_len(input_f) || argmax.len() != grad_out.len() {
        return Err(Error::shape(format!(
            "pool backward: grad extent {fo} does not pool from {input_f}"
        )));
    }
    let mut dx = Tensor::zeros(input_f, c, b);
    for bi in 0..b {
        for ci in 0..c {
            let base = dx.index(0, ci, bi);
            let gbase = grad_out.index(0, ci, bi);
            for o in 0..fo {
                let src = argmax[gbase + o] as usize;
                dx.data_mut()[base + src] += grad_out.data()[gbase + o];
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbour repeat by 2 along frequency, cropped to `target_f`.
pub fn upsample_freq_forward<T: Real>(x: &Tensor<T>, target_f: usize) -> Result<Tensor<T>> {
    let [f, c, b] = x.shape();
    if target_f > 2 * f || target_f == 0 {
        return Err(Error::shape(format!(
            "cannot upsample extent {f} to {target_f}"
        )));
    }
    Ok(Tensor::from_fn(target_f, c, b, |i, ci, bi| x.at(i / 2, ci, bi)))
}

/// Adjoint of [`upsample_freq_forward`]: sums the gradients of replicated positions.
pub fn upsample_freq_backward<T: Real>(grad_out: &Tensor<T>, input_f: usize) -> Result<Tensor<T>> {
    let [fo, c, b] = grad_out.shape();
    if fo > 2 * input_f || fo == 0 {
        return Err(Error::shape(format!(
            "upsample backward: extent {fo} from {input_f}"
        )));
    }
    let mut dx = Tensor::zeros(input_f, c, b);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..fo {
                let j = dx.index(i / 2, ci, bi);
                dx.data_mut()[j] += grad_out.at(i, ci, bi);
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;

    #[test]
    fn ceil_pooling() {
        let x = Tensor::from_vec(3, 1, 1, vec![1.0f64, 3.0, 2.0]).unwrap();
        let (y, arg) = maxpool_freq_forward(&x);
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);
        let g = Tensor::from_vec(2, 1, 1, vec![10.0, 20.0]).unwrap();
        assert_eq!(maxpool_freq_backward(&arg, 3, &g).unwrap().data(), &[0.0, 10.0, 20.0]);
    }

    #[test]
    fn ties_route_low() {
        let x = Tensor::from_vec(2, 1, 1, vec![5.0f64, 5.0]).unwrap();
        let (_, arg) = maxpool_freq_forward(&x);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn pooling_chain_from_129() {
        let mut f = 129;
        let mut chain = vec![f];
        for _ in 0..5 {
            f = pooled_len(f);
            chain.push(f);
        }
        assert_eq!(chain, vec![129, 65, 33, 17, 9, 5]);
    }

    #[test]
    fn upsample_repeat_crop() {
        let x = Tensor::from_vec(2, 1, 1, vec![1.0f64, 2.0]).unwrap();
        assert_eq!(upsample_freq_forward(&x, 3).unwrap().data(), &[1.0, 1.0, 2.0]);
        let g = Tensor::from_vec(3, 1, 1, vec![1.0f64, 2.0, 4.0]).unwrap();
        assert_eq!(upsample_freq_backward(&g, 2).unwrap().data(), &[3.0, 4.0]);
        assert!(upsample_freq_forward(&x, 5).is_err());
    }

    #[test]
    fn pool_then_upsample_restores_extent() {
        for f in 1..140 {
            let x = Tensor::<f32>::zeros(f, 2, 1);
            let (p, _) = maxpool_freq_forward(&x);
            assert_eq!(upsample_freq_forward(&p, f).unwrap().shape(), [f, 2, 1]);
        }
    }

    #[test]
    fn finite_differences() {
        // distinct values keep the argmax stable under perturbation
        let xv: Vec<f64> = (0..18).map(|i| ((i * 7) % 18) as f64 * 0.1).collect();
        let x = Tensor::from_vec(9, 2, 1, xv.clone()).unwrap();
        let r = fd::random(10, 1);
        let (_, arg) = maxpool_freq_forward(&x);
        let g = Tensor::from_vec(5, 2, 1, r.clone()).unwrap();
        let dx = maxpool_freq_backward(&arg, 9, &g).unwrap();
        let eval = |p: &[f64]| {
            let t = Tensor::from_vec(9, 2, 1, p.to_vec()).unwrap();
            fd::probe(maxpool_freq_forward(&t).0.data(), &r)
        };
        assert!(fd::max_rel_error(eval, &xv, dx.data(), 1e-5) < 1e-6);

        let uv = fd::random(10, 2);
        let ru = fd::random(18, 3);
        let gu = Tensor::from_vec(9, 2, 1, ru.clone()).unwrap();
        let du = upsample_freq_backward(&gu, 5).unwrap();
        let eval = |p: &[f64]| {
            let t = Tensor::from_vec(5, 2, 1, p.to_vec()).unwrap();
            fd::probe(upsample_freq_forward(&t, 9).unwrap().data(), &ru)
        };
        assert!(fd::max_rel_error(eval, &uv, du.data(), 1e-5) < 1e-6);
    }
}
