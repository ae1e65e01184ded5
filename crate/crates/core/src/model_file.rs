//! Binary model format.
//!
//! ```text
//! "RCED1" | u32 version | u32 n | n bytes of config text
//! | input mean | input std | target mean | target std
//! | per layer: conv/fc (weights, bias), bn (gamma, beta, running mean, running var)
//! ```
//!
//! Every array is a u64 element count followed by little-endian f32 values.

use std::fs;
use std::path::Path;

use crate::dsp::{FeatureStats, StatsKind};
use crate::enhance::{denoise, SpectralMap};
use crate::error::{Error, Result};
use crate::models::{Layer, Mode, Network, NetworkConfig};
use crate::audio_io::Waveform;

pub const MAGIC: &[u8; 5] = b"RCED1";
pub const FORMAT_VERSION: u32 = 1;

/// A trained network with the feature statistics it was trained on.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub network: Network<f32>,
    pub input_stats: FeatureStats,
    pub target_stats: FeatureStats,
}

fn put_array<I: ExactSizeIterator<Item = f32>>(out: &mut Vec<u8>, values: I) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::ModelFile(format!("truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn array(&mut self, expected: usize, what: &str) -> Result<Vec<f32>> {
        let n = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        if n != expected as u64 {
            return Err(Error::ModelFile(format!("{what}: {n} values, expected {expected}")));
        }
        let raw = self.take(expected * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

impl ModelFile {
    pub fn new(network: Network<f32>, input_stats: FeatureStats, target_stats: FeatureStats) -> Self {
        Self {
            network,
            input_stats,
            target_stats,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let text = self.network.config().to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for s in [&self.input_stats, &self.target_stats] {
            put_array(&mut out, s.mean.iter().map(|&v| v as f32));
            put_array(&mut out, s.std.iter().map(|&v| v as f32));
        }
        for l in self.network.layers() {
            match l {
                Layer::Conv(c) => {
                    put_array(&mut out, c.weights.iter().copied());
                    put_array(&mut out, c.bias.iter().copied());
                }
                Layer::Fc(c) => {
                    put_array(&mut out, c.weights.iter().copied());
                    put_array(&mut out, c.bias.iter().copied());
                }
                Layer::BatchNorm(b) => {
                    for a in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                        put_array(&mut out, a.iter().copied());
                    }
                }
                Layer::Relu | Layer::Pool | Layer::Upsample => {}
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5, "magic")? != MAGIC {
            return Err(Error::ModelFile("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!("unsupported version {version}")));
        }
        let n = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(n, "config text")?)
            .map_err(|_| Error::ModelFile("config text is not UTF-8".into()))?;
        let config = NetworkConfig::parse(text)?;
        config.validate()?;
        let bins = crate::BINS;
        let mut stats = |kind, what: &str| -> Result<FeatureStats> {
            let mean = widen(r.array(bins, &format!("{what} mean"))?);
            let std = widen(r.array(bins, &format!("{what} std"))?);
            if std.iter().any(|&s| !s.is_finite() || s <= 0.0) {
                return Err(Error::ModelFile(format!("{what} std must be positive")));
            }
            Ok(FeatureStats { mean, std, kind })
        };
        let input_stats = stats(StatsKind::Input, "input")?;
        let target_stats = stats(StatsKind::Target, "target")?;
        let mut network = Network::<f32>::build(&config, 0)?;
        for (i, l) in network.layers_mut().iter_mut().enumerate() {
            let what = |p: &str| format!("layer {i} {p}");
            match l {
                Layer::Conv(c) => {
                    c.weights = r.array(c.weights.len(), &what("weights"))?;
                    c.bias = r.array(c.bias.len(), &what("bias"))?;
                }
                Layer::Fc(c) => {
                    c.weights = r.array(c.weights.len(), &what("weights"))?;
                    c.bias = r.array(c.bias.len(), &what("bias"))?;
                }
                Layer::BatchNorm(b) => {
                    b.gamma = r.array(b.gamma.len(), &what("gamma"))?;
                    b.beta = r.array(b.beta.len(), &what("beta"))?;
                    b.running_mean = r.array(b.running_mean.len(), &what("running mean"))?;
                    b.running_var = r.array(b.running_var.len(), &what("running var"))?;
                }
                Layer::Relu | Layer::Pool | Layer::Upsample => {}
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFile(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        network.set_mode(Mode::Infer);
        Ok(Self::new(network, input_stats, target_stats))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn denoise(&self, noisy: &Waveform) -> Result<Waveform> {
        denoise(&self.network, &self.input_stats, &self.target_stats, noisy)
    }

    pub fn map(&self) -> &dyn SpectralMap {
        &self.network
    }
}
