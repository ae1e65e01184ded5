//! Dense tensors and hand-derived forward/backward kernels.
//!
//! Tensors are `F x C x B` (frequency, channels, batch) with frequency varying
//! fastest. Every kernel is generic over [`Real`] so the same code trains in
//! `f32` and is gradient-checked in `f64`.

mod activation;
mod batchnorm;
mod conv;
mod fc;
pub mod gradcheck;
mod init;
mod pool;
mod real;
mod tensor;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{
    batchnorm_apply, batchnorm_backward, batchnorm_forward, BatchNormGrads, BatchNormLayer,
    BnCache, BnMode, BN_EPS, BN_MOMENTUM,
};
pub use conv::{conv1d_backward, conv1d_forward, ConvGrads, ConvLayer};
pub use fc::{fc_backward, fc_forward, FcGrads, FcLayer};
pub use gradcheck::{gradient_check, layer_suite, GradCheck, GradCheckEntry, GradCheckReport};
pub use init::{glorot_bound, glorot_init};
pub use pool::{
    maxpool_freq_backward, maxpool_freq_forward, pooled_len, upsample_freq_backward,
    upsample_freq_forward,
};
pub use real::Real;
pub use tensor::{mse_loss, Tensor};

#[cfg(test)]
pub(crate) mod fd {
    //! Central-difference oracle shared by the kernel tests.

    /// Max relative error between `analytic` and central differences of `f` at `x`.
    pub fn max_rel_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
        assert_eq!(x.len(), analytic.len());
        let mut p = x.to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    pub fn random(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// `sum(r * y)`, a linear probe whose gradient with respect to `y` is `r`.
    pub fn probe(y: &[f64], r: &[f64]) -> f64 {
        y.iter().zip(r).map(|(a, b)| a * b).sum()
    }
}
