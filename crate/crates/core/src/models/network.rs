use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{LayerSpec, NetworkConfig};
use crate::nn::{
    batchnorm_apply, batchnorm_backward, conv1d_backward, conv1d_forward, fc_backward, fc_forward,
    glorot_init, maxpool_freq_backward, maxpool_freq_forward, relu_backward, relu_forward,
    upsample_freq_backward, upsample_freq_forward, BatchNormLayer, BnCache, BnMode, ConvLayer,
    FcLayer, Real, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    BatchNorm(BatchNormLayer<T>),
    Relu,
    Pool,
    Upsample,
    Fc(FcLayer<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Role of a trainable array; L2 decay applies to `Weight` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

/// Gradients for every trainable array, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub arrays: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(Tensor<T>),
    BatchNorm(BnCache<T>),
    Pool { argmax: Vec<u32>, input_f: usize },
    Upsample { input_f: usize },
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    /// Set when the first FC layer reads only the newest input frame.
    newest_frame_of: Option<[usize; 3]>,
}

/// An instantiated network. In train mode, `forward` keeps what `backward` needs.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
    mode: Mode,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> Network<T> {
    /// Instantiates `config` with Glorot-uniform weights, zero biases, and
    /// unit-scale batch norms. The same seed reproduces the same parameters.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::build_for_input(config, crate::BINS, seed)
    }

    /// Like [`Network::build`] for an input extent of `bins`, without
    /// requiring a 129 x 1 output (small nets for checks and experiments).
    pub fn build_for_input(config: &NetworkConfig, bins: usize, seed: u64) -> Result<Self> {
        let c_in = config.input_channels(bins)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layers
            .iter()
            .zip(&c_in)
            .map(|(spec, &ci)| match *spec {
                LayerSpec::Conv { filters, width } => {
                    let mut l = ConvLayer::zeros(width, ci, filters);
                    l.weights = glorot_init(l.weight_count(), width * ci, width * filters, &mut rng);
                    Layer::Conv(l)
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNormLayer::new(ci)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Pool => Layer::Pool,
                LayerSpec::Upsample => Layer::Upsample,
                LayerSpec::Fc { in_dim, out_dim } => {
                    let mut l = FcLayer::zeros(in_dim, out_dim);
                    l.weights = glorot_init(in_dim * out_dim, in_dim, out_dim, &mut rng);
                    Layer::Fc(l)
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
            mode: Mode::Train,
            cache: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.cache = None;
    }

    /// Trainable arrays in layer order: conv/fc `(weights, bias)`, batch norm
    /// `(gamma, beta)`.
    pub fn params(&self) -> Vec<(&[T], ParamKind)> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push((c.weights.as_slice(), ParamKind::Weight));
                    out.push((c.bias.as_slice(), ParamKind::Bias));
                }
                Layer::Fc(c) => {
                    out.push((c.weights.as_slice(), ParamKind::Weight));
                    out.push((c.bias.as_slice(), ParamKind::Bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((b.gamma.as_slice(), ParamKind::BnScale));
                    out.push((b.beta.as_slice(), ParamKind::BnShift));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&mut c.weights);
                    out.push(&mut c.bias);
                }
                Layer::Fc(c) => {
                    out.push(&mut c.weights);
                    out.push(&mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_total(&self) -> usize {
        self.params().iter().map(|(p, _)| p.len()).sum()
    }

    /// Zeroes the weights and bias of the last conv or fc layer, making the
    /// network output identically zero.
    pub fn zero_output_layer(&mut self) {
        for l in self.layers.iter_mut().rev() {
            match l {
                Layer::Conv(c) => {
                    c.weights.fill(T::zero());
                    c.bias.fill(T::zero());
                    return;
                }
                Layer::Fc(c) => {
                    c.weights.fill(T::zero());
                    c.bias.fill(T::zero());
                    return;
                }
                _ => {}
            }
        }
    }

    /// Inference-mode forward pass that leaves the network untouched.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.propagate(x, Mode::Infer)?.0)
    }

    /// Forward pass in the current mode. In train mode batch norms use batch
    /// statistics, update their running averages, and the activations needed
    /// by [`Network::backward`] are kept.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = self.propagate(x, self.mode)?;
        if self.mode == Mode::Train {
            let cache = cache.expect("train mode keeps a cache");
            for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
                if let (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) = (layer, lc) {
                    bn.update_running(c);
                }
            }
            self.cache = Some(cache);
        } else {
            self.cache = None;
        }
        Ok(y)
    }

    fn propagate(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        let train = mode == Mode::Train;
        let n = self.layers.len();
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut caches = Vec::with_capacity(if train { n } else { 0 });
        let mut pooled_from: Vec<usize> = Vec::new();

        let mut newest_frame_of = None;
        let mut h = match self.layers.first() {
            Some(Layer::Fc(fc)) if fc.in_dim == x.freq() && x.channels() > 1 => {
                newest_frame_of = Some(x.shape());
                let last = x.channels() - 1;
                Tensor::from_fn(x.freq(), 1, x.batch(), |f, _, b| x.at(f, last, b))
            }
            _ => x.clone(),
        };

        for (i, layer) in self.layers.iter().enumerate() {
            let (mut out, cache) = match layer {
                Layer::Conv(c) => {
                    let y = conv1d_forward(&h, c)?;
                    (y, LayerCache::Input(h))
                }
                Layer::Fc(c) => {
                    let y = fc_forward(&h, c)?;
                    (y, LayerCache::Input(h))
                }
                Layer::Relu => {
                    let y = relu_forward(&h);
                    (y, LayerCache::Input(h))
                }
                Layer::BatchNorm(bn) => {
                    let bn_mode = if train { BnMode::Train } else { BnMode::Infer };
                    let (y, c) = batchnorm_apply(&h, bn, bn_mode)?;
                    (y, LayerCache::BatchNorm(c))
                }
                Layer::Pool => {
                    pooled_from.push(h.freq());
                    let (y, argmax) = maxpool_freq_forward(&h);
                    (
                        y,
                        LayerCache::Pool {
                            argmax,
                            input_f: h.freq(),
                        },
                    )
                }
                Layer::Upsample => {
                    let target = pooled_from.pop().unwrap_or(2 * h.freq());
                    let y = upsample_freq_forward(&h, target)?;
                    (y, LayerCache::Upsample { input_f: h.freq() })
                }
            };
            for s in self.config.skips.iter().filter(|s| s.dst == i) {
                let src = saved[s.src]
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("skip source {} not computed", s.src)))?;
                out.add_assign(src)?;
            }
            if self.config.skips.iter().any(|s| s.src == i) {
                saved[i] = Some(out.clone());
            }
            if train {
                caches.push(cache);
            }
            h = out;
        }
        if cfg!(debug_assertions) && !h.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        let cache = train.then_some(ForwardCache {
            layers: caches,
            newest_frame_of,
        });
        Ok((h, cache))
    }

    /// Train-mode MSE loss without side effects, plus the sign pattern of every
    /// ReLU input (used to detect kink crossings under finite differences).
    pub(crate) fn train_loss_and_kinks(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<bool>)> {
        let (out, cache) = self.propagate(x, Mode::Train)?;
        let (loss, _) = crate::nn::mse_loss(&out, y)?;
        let cache = cache.expect("train mode keeps a cache");
        let mut kinks = Vec::new();
        for (layer, lc) in self.layers.iter().zip(&cache.layers) {
            if let (Layer::Relu, LayerCache::Input(h)) = (layer, lc) {
                kinks.extend(h.data().iter().map(|v| *v > T::zero()));
            }
        }
        Ok((loss, kinks))
    }

    /// Backpropagates `grad_out` (gradient of the loss with respect to the last
    /// forward output) and returns gradients for all parameters. The gradient
    /// of an additive skip reaches both of its branches unchanged.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        Ok(self.backward_with_input_grad(grad_out)?.0)
    }

    /// [`Network::backward`] that also returns the gradient with respect to
    /// the network input.
    pub fn backward_with_input_grad(&mut self, grad_out: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)> {
        if self.mode != Mode::Train {
            return Err(Error::Invalid("backward requires train mode".into()));
        }
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Invalid("backward without a preceding train-mode forward".into()))?;
        let n = self.layers.len();
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); n];
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            if let Some(extra) = pending[i].take() {
                g.add_assign(&extra)?;
            }
            for s in self.config.skips.iter().filter(|s| s.dst == i) {
                match &mut pending[s.src] {
                    Some(p) => p.add_assign(&g)?,
                    slot => *slot = Some(g.clone()),
                }
            }
            g = match (&self.layers[i], &cache.layers[i]) {
                (Layer::Conv(c), LayerCache::Input(x)) => {
                    let (dx, grads) = conv1d_backward(x, c, &g)?;
                    per_layer[i] = vec![grads.weights, grads.bias];
                    dx
                }
                (Layer::Fc(c), LayerCache::Input(x)) => {
                    let (dx, grads) = fc_backward(x, c, &g)?;
                    per_layer[i] = vec![grads.weights, grads.bias];
                    dx
                }
                (Layer::Relu, LayerCache::Input(x)) => relu_backward(x, &g)?,
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                    let (dx, grads) = batchnorm_backward(c, bn, &g)?;
                    per_layer[i] = vec![grads.gamma, grads.beta];
                    dx
                }
                (Layer::Pool, LayerCache::Pool { argmax, input_f }) => {
                    maxpool_freq_backward(argmax, *input_f, &g)?
                }
                (Layer::Upsample, LayerCache::Upsample { input_f }) => {
                    upsample_freq_backward(&g, *input_f)?
                }
                _ => return Err(Error::Invalid(format!("cache mismatch at layer {i}"))),
            };
        }
        if let Some([f, c, b]) = cache.newest_frame_of {
            let mut full = Tensor::zeros(f, c, b);
            for bi in 0..b {
                for fi in 0..f {
                    full.set(fi, c - 1, bi, g.at(fi, 0, bi));
                }
            }
            g = full;
        }
        let arrays = per_layer.into_iter().flatten().collect();
        Ok((Gradients { arrays }, g))
    }

    /// Copies parameters and batch-norm statistics into another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(ConvLayer {
                    width: c.width,
                    c_in: c.c_in,
                    c_out: c.c_out,
                    weights: cv(&c.weights),
                    bias: cv(&c.bias),
                }),
                Layer::Fc(c) => Layer::Fc(FcLayer {
                    in_dim: c.in_dim,
                    out_dim: c.out_dim,
                    weights: cv(&c.weights),
                    bias: cv(&c.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNormLayer {
                    gamma: cv(&b.gamma),
                    beta: cv(&b.beta),
                    running_mean: cv(&b.running_mean),
                    running_var: cv(&b.running_var),
                    momentum: U::from_f64_lossy(b.momentum.to_f64_lossy()),
                    eps: U::from_f64_lossy(b.eps.to_f64_lossy()),
                }),
                Layer::Relu => Layer::Relu,
                Layer::Pool => Layer::Pool,
                Layer::Upsample => Layer::Upsample,
            })
            .collect();
        Network {
            config: self.config.clone(),
            layers,
            mode: self.mode,
            cache: None,
        }
    }
}
