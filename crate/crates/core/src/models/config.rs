use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::pooled_len;
use crate::{BINS, CONTEXT_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { filters: usize, width: usize },
    BatchNorm,
    Relu,
    Pool,
    Upsample,
    Fc { in_dim: usize, out_dim: usize },
}

/// Additive connection: the output of layer `src` is added to the output of
/// layer `dst` (for a conv destination, before the following activation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub src: usize,
    pub dst: usize,
}

/// Declarative layer list plus skip connections.
///
/// Text form, one `key = value` per line (`#` starts a comment):
///
/// ```text
/// arch = rced10
/// frames = 8
/// layer.0 = conv:12:13
/// layer.1 = relu
/// layer.2 = bn
/// layer.3 = pool
/// layer.4 = upsample
/// layer.5 = fc:129:1024
/// skip = 2->24
/// ```
///
/// `conv:<filters>:<width>` takes its input channel count from the previous
/// layer (the first layer sees the `frames` stacked spectra as channels).
/// `frames` is optional and defaults to 8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub name: String,
    pub frames: usize,
    pub layers: Vec<LayerSpec>,
    pub skips: Vec<Skip>,
}

pub const PRESET_NAMES: [&str; 5] = ["ced11", "rced10", "rced16", "crced16", "fnn4"];

/// Weight, bias and batch-norm parameter totals. Running statistics are not
/// counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub weights: usize,
    pub biases: usize,
    pub bn_params: usize,
    pub total: usize,
}

impl ParamCount {
    /// Storage at 4 bytes per parameter.
    pub fn bytes(&self) -> usize {
        self.total * 4
    }
}

/// `(Conv, ReLU, BN) x (n - 1), Conv`, with each listed block pair joined by a skip
/// from the source block's output to the destination block's conv output.
fn redundant(name: &str, filters: &[usize], widths: &[usize], block_skips: &[(usize, usize)]) -> NetworkConfig {
    let mut layers = Vec::new();
    let last = filters.len() - 1;
    for (i, (&f, &w)) in filters.iter().zip(widths).enumerate() {
        layers.push(LayerSpec::Conv { filters: f, width: w });
        if i < last {
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::BatchNorm);
        }
    }
    let skips = block_skips
        .iter()
        .map(|&(a, b)| Skip {
            src: 3 * a + 2,
            dst: 3 * b,
        })
        .collect();
    NetworkConfig {
        name: name.into(),
        frames: CONTEXT_FRAMES,
        layers,
        skips,
    }
}

/// Skips between mirrored blocks `i <-> n - 2 - i` of a symmetric stack of
/// `n` conv layers (the final output conv excluded).
fn mirrored_pairs(n: usize) -> Vec<(usize, usize)> {
    let body = n - 1;
    (0..body / 2).map(|i| (i, body - 1 - i)).collect()
}

impl NetworkConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "rced10" => redundant(
                name,
                &[12, 16, 20, 24, 32, 24, 20, 16, 12, 1],
                &[13, 11, 9, 7, 7, 7, 9, 11, 13, 129],
                &mirrored_pairs(10),
            ),
            "rced16" => redundant(
                name,
                &[10, 12, 14, 15, 19, 21, 23, 25, 23, 21, 19, 15, 14, 12, 10, 1],
                &[11, 7, 5, 5, 5, 5, 7, 11, 7, 5, 5, 5, 5, 7, 11, 129],
                &mirrored_pairs(16),
            ),
            "crced16" => {
                let mut filters = Vec::new();
                let mut widths = Vec::new();
                for _ in 0..5 {
                    filters.extend([18, 30, 8]);
                    widths.extend([9, 5, 9]);
                }
                filters.push(1);
                widths.push(129);
                // chain the 8-channel outputs of consecutive cascade units
                let pairs: Vec<_> = (0..4).map(|u| (3 * u + 2, 3 * u + 5)).collect();
                redundant(name, &filters, &widths, &pairs)
            }
            "ced11" => Self::ced11(),
            "fnn4" => NetworkConfig {
                name: name.into(),
                frames: CONTEXT_FRAMES,
                layers: vec![
                    LayerSpec::Fc { in_dim: BINS, out_dim: 1024 },
                    LayerSpec::Relu,
                    LayerSpec::Fc { in_dim: 1024, out_dim: 1024 },
                    LayerSpec::Relu,
                    LayerSpec::Fc { in_dim: 1024, out_dim: 1024 },
                    LayerSpec::Relu,
                    LayerSpec::Fc { in_dim: 1024, out_dim: BINS },
                ],
                skips: Vec::new(),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (valid: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Encoder `(Conv, BN, ReLU, Pool) x 5`, decoder `(Conv, BN, ReLU, Upsample) x 5`,
    /// output conv. Skips join every other extent-matched (pooled encoder,
    /// upsampled decoder) pair.
    fn ced11() -> Self {
        let filters = [12, 16, 20, 24, 32, 24, 20, 16, 12, 8, 1];
        let widths = [13, 11, 9, 7, 5, 7, 9, 11, 13, 8, 129];
        let mut layers = Vec::new();
        for i in 0..10 {
            layers.push(LayerSpec::Conv {
                filters: filters[i],
                width: widths[i],
            });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
            layers.push(if i < 5 { LayerSpec::Pool } else { LayerSpec::Upsample });
        }
        layers.push(LayerSpec::Conv {
            filters: 1,
            width: 129,
        });
        // pool of encoder block e (layer 4e+3) matches the upsample of decoder
        // block 8-e (layer 4(8-e)+3) in extent and channels for e = 0..3.
        let skips = [0, 2]
            .iter()
            .map(|&e| Skip {
                src: 4 * e + 3,
                dst: 4 * (8 - e) + 3,
            })
            .collect();
        NetworkConfig {
            name: "ced11".into(),
            frames: CONTEXT_FRAMES,
            layers,
            skips,
        }
    }

    pub fn without_skips(&self) -> Self {
        Self {
            skips: Vec::new(),
            ..self.clone()
        }
    }

    /// Output `(frequency extent, channels)` of every layer for an input of
    /// `bins x frames`, validating channel flow, pool/upsample pairing and skips.
    pub fn layer_shapes(&self, bins: usize) -> Result<Vec<(usize, usize)>> {
        if self.layers.is_empty() {
            return Err(Error::Config("no layers".into()));
        }
        if self.frames == 0 || bins == 0 {
            return Err(Error::Config("empty input geometry".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut f, mut c) = (bins, self.frames);
        let mut pooled_from = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { filters, width } => {
                    if filters == 0 || width == 0 {
                        return Err(Error::Config(format!("layer {i}: empty conv")));
                    }
                    c = filters;
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => {}
                LayerSpec::Pool => {
                    pooled_from.push(f);
                    f = pooled_len(f);
                }
                LayerSpec::Upsample => {
                    f = pooled_from.pop().unwrap_or(2 * f);
                }
                LayerSpec::Fc { in_dim, out_dim } => {
                    let newest_frame = i == 0 && in_dim == f;
                    if in_dim != f * c && !newest_frame {
                        return Err(Error::Config(format!(
                            "layer {i}: fc expects {in_dim} inputs but receives {f}x{c}"
                        )));
                    }
                    f = out_dim;
                    c = 1;
                }
            }
            shapes.push((f, c));
        }
        for s in &self.skips {
            if s.src >= s.dst || s.dst >= self.layers.len() {
                return Err(Error::Config(format!(
                    "skip {}->{} must point forward inside the network",
                    s.src, s.dst
                )));
            }
            if shapes[s.src] != shapes[s.dst] {
                return Err(Error::Config(format!(
                    "skip {}->{} joins {:?} to {:?}",
                    s.src, s.dst, shapes[s.src], shapes[s.dst]
                )));
            }
        }
        Ok(shapes)
    }

    /// Checks the config against the working geometry: `129 x frames` in,
    /// `129 x 1` out.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes(BINS)?;
        let out = *shapes.last().unwrap();
        if out != (BINS, 1) {
            return Err(Error::Config(format!(
                "network maps {BINS}x{} to {}x{}, expected {BINS}x1",
                self.frames, out.0, out.1
            )));
        }
        Ok(())
    }

    /// Input channel count seen by each layer.
    pub(crate) fn input_channels(&self, bins: usize) -> Result<Vec<usize>> {
        let shapes = self.layer_shapes(bins)?;
        Ok((0..self.layers.len())
            .map(|i| if i == 0 { self.frames } else { shapes[i - 1].1 })
            .collect())
    }

    pub fn param_count(&self) -> Result<ParamCount> {
        let c_in = self.input_channels(BINS)?;
        let mut p = ParamCount {
            weights: 0,
            biases: 0,
            bn_params: 0,
            total: 0,
        };
        for (layer, &ci) in self.layers.iter().zip(&c_in) {
            match *layer {
                LayerSpec::Conv { filters, width } => {
                    p.weights += width * ci * filters;
                    p.biases += filters;
                }
                LayerSpec::Fc { in_dim, out_dim } => {
                    p.weights += in_dim * out_dim;
                    p.biases += out_dim;
                }
                LayerSpec::BatchNorm => p.bn_params += 2 * ci,
                _ => {}
            }
        }
        p.total = p.weights + p.biases + p.bn_params;
        Ok(p)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "arch = {}", self.name).unwrap();
        writeln!(s, "frames = {}", self.frames).unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            let v = match *l {
                LayerSpec::Conv { filters, width } => format!("conv:{filters}:{width}"),
                LayerSpec::BatchNorm => "bn".into(),
                LayerSpec::Relu => "relu".into(),
                LayerSpec::Pool => "pool".into(),
                LayerSpec::Upsample => "upsample".into(),
                LayerSpec::Fc { in_dim, out_dim } => format!("fc:{in_dim}:{out_dim}"),
            };
            writeln!(s, "layer.{i} = {v}").unwrap();
        }
        for sk in &self.skips {
            writeln!(s, "skip = {}->{}", sk.src, sk.dst).unwrap();
        }
        s
    }

    /// Parses the text form. Shape validity is checked separately by
    /// [`NetworkConfig::validate`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut frames = CONTEXT_FRAMES;
        let mut layers: Vec<Option<LayerSpec>> = Vec::new();
        let mut skips = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Config(format!("line {}: {msg}: `{line}`", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "arch" => name = Some(value.to_string()),
                "frames" => frames = value.parse().map_err(|_| err("bad frame count"))?,
                "skip" => {
                    let (a, b) = value.split_once("->").ok_or_else(|| err("expected src->dst"))?;
                    skips.push(Skip {
                        src: a.trim().parse().map_err(|_| err("bad skip source"))?,
                        dst: b.trim().parse().map_err(|_| err("bad skip destination"))?,
                    });
                }
                _ => {
                    let idx: usize = key
                        .strip_prefix("layer.")
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| err("unknown key"))?;
                    let spec = parse_layer(value).ok_or_else(|| err("bad layer"))?;
                    if idx >= layers.len() {
                        layers.resize(idx + 1, None);
                    }
                    if layers[idx].replace(spec).is_some() {
                        return Err(err("duplicate layer index"));
                    }
                }
            }
        }
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Config(format!("layer.{i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkConfig {
            name: name.ok_or_else(|| Error::Config("missing `arch`".into()))?,
            frames,
            layers,
            skips,
        })
    }
}

fn parse_layer(v: &str) -> Option<LayerSpec> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    let num = |i: usize| parts.get(i)?.parse::<usize>().ok();
    Some(match (parts[0], parts.len()) {
        ("conv", 3) => LayerSpec::Conv {
            filters: num(1)?,
            width: num(2)?,
        },
        ("fc", 3) => LayerSpec::Fc {
            in_dim: num(1)?,
            out_dim: num(2)?,
        },
        ("bn", 1) => LayerSpec::BatchNorm,
        ("relu", 1) => LayerSpec::Relu,
        ("pool", 1) => LayerSpec::Pool,
        ("upsample", 1) => LayerSpec::Upsample,
        _ => return None,
    })
}
