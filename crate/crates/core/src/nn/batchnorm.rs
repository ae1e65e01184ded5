use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Running-statistics decay: `running = momentum * running + (1 - momentum) * batch`.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel batch normalization over the frequency and batch axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// What the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mode: BnMode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

impl<T: Real> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            eps: T::from_f64_lossy(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let m = self.momentum;
        let one_m = T::one() - m;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + one_m * cache.batch_mean[c];
            self.running_var[c] = m * self.running_var[c] + one_m * cache.batch_var[c];
        }
    }
}

/// Forward pass without touching the running statistics.
pub fn batchnorm_apply<T: Real>(
    x: &Tensor<T>,
    layer: &BatchNormLayer<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let [f, ch, b] = x.shape();
    if ch != layer.channels() {
        return Err(Error::shape(format!(
            "batch norm over {} channels got {ch}",
            layer.channels()
        )));
    }
    if mode == BnMode::Train && b < 2 {
        return Err(Error::Invalid(
            "batch norm in train mode needs a batch of at least 2".into(),
        ));
    }
    let n = T::from_usize(f * b).unwrap();
    let mut mean = vec![T::zero(); ch];
    let mut var = vec![T::zero(); ch];
    match mode {
        BnMode::Train => {
            for c in 0..ch {
                let mut s = T::zero();
                for bi in 0..b {
                    s += x.column(c, bi).iter().copied().sum::<T>();
                }
                mean[c] = s / n;
                let mut v = T::zero();
                for bi in 0..b {
                    v += x.column(c, bi).iter().map(|&e| (e - mean[c]) * (e - mean[c])).sum::<T>();
                }
                var[c] = v / n;
            }
        }
        BnMode::Infer => {
            mean.copy_from_slice(&layer.running_mean);
            var.copy_from_slice(&layer.running_var);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + layer.eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(f, ch, b);
    let mut y = Tensor::zeros(f, ch, b);
    for bi in 0..b {
        for c in 0..ch {
            let start = x.index(0, c, bi);
            let (g, be, mu, is) = (layer.gamma[c], layer.beta[c], mean[c], inv_std[c]);
            for i in start..start + f {
                let h = (x.data()[i] - mu) * is;
                x_hat.data_mut()[i] = h;
                y.data_mut()[i] = g * h + be;
            }
        }
    }
    Ok((
        y,
        BnCache {
            mode,
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Train mode normalizes with batch statistics and updates the running
/// averages; infer mode uses the running averages.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    layer: &mut BatchNormLayer<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (y, cache) = batchnorm_apply(x, layer, mode)?;
    if mode == BnMode::Train {
        layer.update_running(&cache);
    }
    Ok((y, cache))
}

/// Exact gradient of the train-mode map, including the batch statistics'
/// dependence on the input.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    layer: &BatchNormLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormGrads<T>)> {
    if cache.mode != BnMode::Train {
        return Err(Error::Invalid(
            "batch norm backward requires a train-mode forward".into(),
        ));
    }
    let [f, ch, b] = cache.x_hat.shape();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(format!(
            "batch norm grad_out {:?} vs {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let n = T::from_usize(f * b).unwrap();
    let mut grads = BatchNormGrads {
        gamma: vec![T::zero(); ch],
        beta: vec![T::zero(); ch],
    };
    for c in 0..ch {
        for bi in 0..b {
            for (&g, &h) in grad_out.column(c, bi).iter().zip(cache.x_hat.column(c, bi)) {
                grads.beta[c] += g;
                grads.gamma[c] += g * h;
            }
        }
    }
    let mut dx = Tensor::zeros(f, ch, b);
    for bi in 0..b {
        for c in 0..ch {
            let scale = layer.gamma[c] * cache.inv_std[c] / n;
            let (sg, sgh) = (grads.beta[c], grads.gamma[c]);
            let start = dx.index(0, c, bi);
            for i in start..start + f {
                let g = grad_out.data()[i];
                let h = cache.x_hat.data()[i];
                dx.data_mut()[i] = scale * (n * g - sg - h * sgh);
            }
        }
    }
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;

    fn layer(ch: usize, gamma: Vec<f64>, beta: Vec<f64>) -> BatchNormLayer<f64> {
        BatchNormLayer {
            gamma,
            beta,
            ..BatchNormLayer::new(ch)
        }
    }

    #[test]
    fn normalized_input_is_fixed_point() {
        // one channel, values +-1: mean 0, variance 1
        let x = Tensor::from_vec(2, 1, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut l = BatchNormLayer::<f64>::new(1);
        let (y, _) = batchnorm_forward(&x, &mut l, BnMode::Train).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-15);
        }
        // running stats moved toward (0, 1) from (0, 1): unchanged
        assert_eq!(l.running_mean, vec![0.0]);
        assert!((l.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_channel_outputs_beta() {
        let x = Tensor::from_vec(3, 1, 2, vec![4.0; 6]).unwrap();
        let mut l = layer(1, vec![3.0], vec![0.25]);
        let (y, _) = batchnorm_forward(&x, &mut l, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn infer_formula() {
        let x = Tensor::from_vec(1, 1, 1, vec![3.0]).unwrap();
        let mut l = layer(1, vec![2.0], vec![1.0]);
        let (y, _) = batchnorm_forward(&x, &mut l, BnMode::Infer).unwrap();
        assert!((y.data()[0] - (1.0 + 6.0 / (1.0 + BN_EPS).sqrt())).abs() < 1e-12);
        assert!((y.data()[0] - 7.0).abs() < 1e-4);
    }

    #[test]
    fn running_stats_update() {
        let x = Tensor::from_vec(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let mut l = BatchNormLayer::<f64>::new(1);
        batchnorm_forward(&x, &mut l, BnMode::Train).unwrap();
        assert!((l.running_mean[0] - 0.01 * 3.0).abs() < 1e-12);
        assert!((l.running_var[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut l = BatchNormLayer::<f64>::new(2);
        assert!(batchnorm_forward(&Tensor::zeros(4, 2, 1), &mut l, BnMode::Train).is_err());
        assert!(batchnorm_forward(&Tensor::zeros(4, 3, 2), &mut l, BnMode::Train).is_err());
        let (_, cache) = batchnorm_forward(&Tensor::zeros(4, 2, 1), &mut l, BnMode::Infer).unwrap();
        assert!(batchnorm_backward(&cache, &l, &Tensor::zeros(4, 2, 1)).is_err());
    }

    #[test]
    fn constant_upstream_gives_zero_input_grad() {
        let x = Tensor::from_vec(5, 2, 3, fd::random(30, 1)).unwrap();
        let mut l = layer(2, vec![1.5, -0.7], vec![0.1, 0.2]);
        let (_, cache) = batchnorm_forward(&x, &mut l, BnMode::Train).unwrap();
        let g = Tensor::from_fn(5, 2, 3, |_, c, _| if c == 0 { 2.0 } else { -3.0 });
        let (dx, grads) = batchnorm_backward(&cache, &l, &g).unwrap();
        assert!(dx.data().iter().all(|v| v.abs() < 1e-12));
        // gamma gradient is sum(g * x_hat), which vanishes for constant g
        assert!(grads.gamma.iter().all(|v| v.abs() < 1e-12));
        assert!((grads.beta[0] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn finite_differences() {
        let (f, ch, b) = (5, 4, 3);
        let xv = fd::random(f * ch * b, 20);
        let gamma = fd::random(ch, 21);
        let beta = fd::random(ch, 22);
        let r = fd::random(f * ch * b, 23);
        let eval = |xv: &[f64], gamma: &[f64], beta: &[f64]| {
            let x = Tensor::from_vec(f, ch, b, xv.to_vec()).unwrap();
            let l = layer(ch, gamma.to_vec(), beta.to_vec());
            let (y, _) = batchnorm_apply(&x, &l, BnMode::Train).unwrap();
            fd::probe(y.data(), &r)
        };
        let x = Tensor::from_vec(f, ch, b, xv.clone()).unwrap();
        let l = layer(ch, gamma.clone(), beta.clone());
        let (_, cache) = batchnorm_apply(&x, &l, BnMode::Train).unwrap();
        let g = Tensor::from_vec(f, ch, b, r.clone()).unwrap();
        let (dx, grads) = batchnorm_backward(&cache, &l, &g).unwrap();

        // gamma gradient is sum(g * x_hat) by definition
        for c in 0..ch {
            let mut s = 0.0;
            for bi in 0..b {
                for i in 0..f {
                    s += g.at(i, c, bi) * cache.x_hat.at(i, c, bi);
                }
            }
            assert!((s - grads.gamma[c]).abs() < 1e-12);
        }
        let h = 1e-5;
        assert!(fd::max_rel_error(|p| eval(p, &gamma, &beta), &xv, dx.data(), h) < 1e-6);
        assert!(fd::max_rel_error(|p| eval(&xv, p, &beta), &gamma, &grads.gamma, h) < 1e-6);
        assert!(fd::max_rel_error(|p| eval(&xv, &gamma, p), &beta, &grads.beta, h) < 1e-6);
    }
}
