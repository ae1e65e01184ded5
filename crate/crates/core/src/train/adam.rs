use crate::error::{Error, Result};
use crate::models::ParamKind;
use crate::nn::Real;

pub const DEFAULT_LR: f64 = 0.0015;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient of `ParamKind::Weight` arrays.
    pub l2_lambda: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2_lambda: 0.0,
        }
    }
}

/// First and second moments per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `shapes` (array lengths).
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update of every array in `params`.
    pub fn step(&mut self, params: Vec<&mut [T]>, kinds: &[ParamKind], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || kinds.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state has {} arrays, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(format!("adam array {i} length mismatch")));
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let lr_t = c.lr / (1.0 - c.beta1.powi(t));
        let v_corr = 1.0 / (1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one, eps) = (T::one(), T::from_f64_lossy(c.eps));
        let (lr_t, v_corr) = (T::from_f64_lossy(lr_t), T::from_f64_lossy(v_corr));
        let l2 = T::from_f64_lossy(c.l2_lambda);
        for (i, p) in params.into_iter().enumerate() {
            let decay = kinds[i] == ParamKind::Weight && c.l2_lambda != 0.0;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let mut g = grads[i][j];
                if decay {
                    g += l2 * p[j];
                }
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                p[j] -= lr_t * m[j] / ((v[j] * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.eps, c.l2_lambda), (0.0015, 0.9, 0.999, 1e-8, 0.0));
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = vec![0.3f64, -1.2, 4.0];
        let mut s = AdamState::<f64>::new(AdamConfig::default(), &[3]);
        for _ in 0..5 {
            s.step(vec![&mut p], &[ParamKind::Weight], &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2, 4.0]);
        assert_eq!(s.t, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![1.0f64];
        let mut s = AdamState::<f64>::new(AdamConfig::default(), &[1]);
        s.step(vec![&mut p], &[ParamKind::Bias], &[vec![1.0]]).unwrap();
        let expected = 0.0015 / (1.0 + 1e-8);
        assert!(((1.0 - p[0]) - expected).abs() < 1e-9);
    }

    #[test]
    fn first_step_magnitude_is_lr_for_any_gradient_scale() {
        for g in [1e-3, 0.5, 7.0, -20.0] {
            let mut p = vec![0.0f64];
            let mut s = AdamState::<f64>::new(AdamConfig::default(), &[1]);
            s.step(vec![&mut p], &[ParamKind::Weight], &[vec![g]]).unwrap();
            let expected = 0.0015 * g.abs() / (g.abs() + 1e-8);
            assert!((p[0].abs() - expected).abs() < 1e-12, "{g}: {}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn l2_touches_weights_only() {
        let cfg = AdamConfig {
            l2_lambda: 1e-5,
            ..AdamConfig::default()
        };
        let mut w = vec![2.0f64];
        let mut b = vec![2.0f64];
        let mut s = AdamState::<f64>::new(cfg, &[1, 1]);
        s.step(vec![&mut w, &mut b], &[ParamKind::Weight, ParamKind::Bias], &[vec![0.0], vec![0.0]])
            .unwrap();
        assert!(w[0] < 2.0);
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn matches_reference_over_several_steps() {
        let grads = [0.5, -0.25, 1.0, 0.0, 2.0];
        let mut p = vec![0.1f64];
        let mut s = AdamState::<f64>::new(AdamConfig::default(), &[1]);
        let (mut m, mut v, mut q) = (0.0f64, 0.0f64, 0.1f64);
        for (k, &g) in grads.iter().enumerate() {
            s.step(vec![&mut p], &[ParamKind::Weight], &[vec![g]]).unwrap();
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            q -= 0.0015 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - q).abs() < 1e-12);
        }
        assert!(s.v[0][0] >= 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0f64; 2];
        let mut s = AdamState::<f64>::new(AdamConfig::default(), &[3]);
        assert!(s.step(vec![&mut p], &[ParamKind::Weight], &[vec![0.0; 2]]).is_err());
    }
}
