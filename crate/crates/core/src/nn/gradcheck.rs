//! Central-difference verification of the analytic gradients.

use std::fmt;

use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{Layer, Network, NetworkConfig};
use crate::nn::{mse_loss, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Largest relative error over one parameter array (or the input).
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub count: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    /// Coordinates re-evaluated with a smaller step because a ReLU input
    /// changed sign inside the difference interval.
    pub kink_retries: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "  {:<28} n={:<6} max_rel_err={:.3e}",
                e.name, e.count, e.max_rel_error
            )?;
        }
        write!(
            f,
            "  max {:.3e} (tolerance {:.0e}, kink retries {})",
            self.max_rel_error(),
            self.tolerance,
            self.kink_retries
        )
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn param_names(net: &Network<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (i, l) in net.layers().iter().enumerate() {
        match l {
            Layer::Conv(_) => {
                names.push(format!("layer{i}.conv.weights"));
                names.push(format!("layer{i}.conv.bias"));
            }
            Layer::Fc(_) => {
                names.push(format!("layer{i}.fc.weights"));
                names.push(format!("layer{i}.fc.bias"));
            }
            Layer::BatchNorm(_) => {
                names.push(format!("layer{i}.bn.gamma"));
                names.push(format!("layer{i}.bn.beta"));
            }
            _ => {}
        }
    }
    names
}

/// Options for [`GradCheck::run`]. `corrupt_analytic` perturbs the analytic
/// gradient before comparison so callers can confirm the checker fails.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    pub corrupt_analytic: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            corrupt_analytic: false,
        }
    }
}

impl GradCheck {
    /// Compares backprop gradients of the MSE loss (batch norms in train mode)
    /// against `(L(p + h) - L(p - h)) / 2h` for every parameter and input
    /// coordinate. If a ReLU input flips sign within `[p - h, p + h]` the
    /// coordinate is retried with `h / 10` (up to three times).
    pub fn run(&self, net: &Network<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<GradCheckReport> {
        let mut work = net.clone();
        work.set_mode(crate::models::Mode::Train);
        let pred = work.forward(x)?;
        let (_, dloss) = mse_loss(&pred, y)?;
        let (mut grads, mut dx) = work.backward_with_input_grad(&dloss)?;
        if self.corrupt_analytic {
            if let Some(g) = grads.arrays.iter_mut().find(|a| !a.is_empty()) {
                g[0] = g[0] * 1.5 + 1e-3;
            }
            dx.data_mut()[0] += 1e-3;
        }

        let mut probe = net.clone();
        let (_, base_kinks) = probe.train_loss_and_kinks(x, y)?;
        let mut kink_retries = 0;
        let mut entries = Vec::new();

        let names = param_names(&probe);
        for (a, name) in names.iter().enumerate() {
            let len = probe.params()[a].0.len();
            let mut worst: f64 = 0.0;
            for j in 0..len {
                let orig = probe.params()[a].0[j];
                let numeric = self.central_difference(&base_kinks, &mut kink_retries, |h| {
                    probe.params_mut()[a][j] = orig + h;
                    let up = probe.train_loss_and_kinks(x, y);
                    probe.params_mut()[a][j] = orig - h;
                    let down = probe.train_loss_and_kinks(x, y);
                    probe.params_mut()[a][j] = orig;
                    (up, down)
                })?;
                worst = worst.max(relative_error(grads.arrays[a][j], numeric));
            }
            entries.push(GradCheckEntry {
                name: name.clone(),
                count: len,
                max_rel_error: worst,
            });
        }

        let mut xp = x.clone();
        let mut worst: f64 = 0.0;
        for j in 0..x.len() {
            let orig = x.data()[j];
            let numeric = self.central_difference(&base_kinks, &mut kink_retries, |h| {
                xp.data_mut()[j] = orig + h;
                let up = probe.train_loss_and_kinks(&xp, y);
                xp.data_mut()[j] = orig - h;
                let down = probe.train_loss_and_kinks(&xp, y);
                xp.data_mut()[j] = orig;
                (up, down)
            })?;
            worst = worst.max(relative_error(dx.data()[j], numeric));
        }
        entries.push(GradCheckEntry {
            name: "input".into(),
            count: x.len(),
            max_rel_error: worst,
        });

        Ok(GradCheckReport {
            entries,
            tolerance: self.tolerance,
            kink_retries,
        })
    }

    #[allow(clippy::type_complexity)]
    fn central_difference(
        &self,
        base_kinks: &[bool],
        retries: &mut usize,
        mut eval: impl FnMut(f64) -> (Result<(f64, Vec<bool>)>, Result<(f64, Vec<bool>)>),
    ) -> Result<f64> {
        let mut h = self.step;
        let mut attempt = 0;
        loop {
            let (up, down) = eval(h);
            let ((lu, ku), (ld, kd)) = (up?, down?);
            let numeric = (lu - ld) / (2.0 * h);
            if (ku == base_kinks && kd == base_kinks) || attempt == 3 {
                return Ok(numeric);
            }
            *retries += 1;
            attempt += 1;
            h /= 10.0;
        }
    }
}

/// [`GradCheck::run`] with the given step and tolerance.
pub fn gradient_check(
    net: &Network<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    GradCheck {
        step,
        tolerance,
        corrupt_analytic: false,
    }
    .run(net, x, y)
}

/// One case of [`layer_suite`]: a small network, its input extent and batch.
struct SuiteCase {
    name: &'static str,
    config: &'static str,
    bins: usize,
    batch: usize,
    away_from_zero: bool,
}

const SUITE: [SuiteCase; 8] = [
    SuiteCase {
        name: "conv",
        config: "frames = 2\nlayer.0 = conv:3:5\n",
        bins: 12,
        batch: 2,
        away_from_zero: false,
    },
    SuiteCase {
        name: "batchnorm",
        config: "frames = 3\nlayer.0 = bn\nlayer.1 = conv:2:3\n",
        bins: 10,
        batch: 4,
        away_from_zero: false,
    },
    SuiteCase {
        name: "relu",
        config: "frames = 2\nlayer.0 = relu\nlayer.1 = conv:2:3\n",
        bins: 10,
        batch: 3,
        away_from_zero: true,
    },
    SuiteCase {
        name: "maxpool",
        config: "frames = 2\nlayer.0 = conv:3:3\nlayer.1 = pool\nlayer.2 = conv:2:3\n",
        bins: 11,
        batch: 3,
        away_from_zero: false,
    },
    SuiteCase {
        name: "upsample",
        config: "frames = 2\nlayer.0 = conv:3:3\nlayer.1 = pool\nlayer.2 = conv:3:3\n\
                 layer.3 = upsample\nlayer.4 = conv:1:3\n",
        bins: 11,
        batch: 3,
        away_from_zero: false,
    },
    SuiteCase {
        name: "fc",
        config: "frames = 3\nlayer.0 = fc:36:5\n",
        bins: 12,
        batch: 3,
        away_from_zero: false,
    },
    SuiteCase {
        name: "rced-tiny",
        config: "frames = 8\nlayer.0 = conv:6:5\nlayer.1 = relu\nlayer.2 = bn\n\
                 layer.3 = conv:6:5\nlayer.4 = relu\nlayer.5 = bn\nlayer.6 = conv:1:9\nskip = 2->3\n",
        bins: 16,
        batch: 4,
        away_from_zero: false,
    },
    SuiteCase {
        name: "fnn-tiny",
        config: "frames = 8\nlayer.0 = fc:129:8\nlayer.1 = relu\nlayer.2 = fc:8:129\n",
        bins: 129,
        batch: 4,
        away_from_zero: false,
    },
];

fn random_tensor(rng: &mut ChaCha8Rng, f: usize, c: usize, b: usize, away_from_zero: bool) -> Tensor<f64> {
    Tensor::from_fn(f, c, b, |_, _, _| {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if away_from_zero {
            v.signum() * (0.1 + 0.9 * v.abs())
        } else {
            v
        }
    })
}

/// Double-precision checks of every layer kind plus small end-to-end R-CED
/// and FNN networks. Deterministic for a given seed.
pub fn layer_suite(seed: u64, check: GradCheck) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SUITE
        .iter()
        .map(|case| {
            let text = format!("arch = {}\n{}", case.name, case.config);
            let config = NetworkConfig::parse(&text)?;
            let net = Network::<f64>::build_for_input(&config, case.bins, rng.gen())?;
            let (f_out, c_out) = *config.layer_shapes(case.bins)?.last().expect("non-empty network");
            let x = random_tensor(&mut rng, case.bins, config.frames, case.batch, case.away_from_zero);
            let y = random_tensor(&mut rng, f_out, c_out, case.batch, false);
            Ok((case.name, check.run(&net, &x, &y)?))
        })
        .collect()
}
