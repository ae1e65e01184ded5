//! Waveform-in, waveform-out denoising with a trained spectral mapping.

use crate::audio_io::{resample_to_8k, Waveform};
use crate::dsp::{fill_window, istft, standardize, stft, FeatureStats, Frames, StftConfig};
use crate::error::{Error, Result};
use crate::models::Network;
use crate::nn::Tensor;

const CHUNK: usize = 256;

/// Maps standardized `bins x context x B` windows to standardized
/// `bins x 1 x B` clean frames.
pub trait SpectralMap {
    fn context(&self) -> usize;
    fn map(&self, windows: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl SpectralMap for Network<f32> {
    fn context(&self) -> usize {
        self.config().frames
    }

    fn map(&self, windows: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.predict(windows)
    }
}

/// Smallest length `>= len` that is an exact STFT frame grid.
pub fn padded_len(len: usize, cfg: &StftConfig) -> usize {
    if len <= cfg.fft_size {
        cfg.fft_size
    } else {
        cfg.fft_size + (len - cfg.fft_size).div_ceil(cfg.hop) * cfg.hop
    }
}

/// Predicts clean magnitudes for every frame of `noisy_mag` (inference
/// windows: the history before frame 0 repeats frame 0).
pub fn enhance_magnitude<M: SpectralMap + ?Sized>(
    model: &M,
    input_stats: &FeatureStats,
    target_stats: &FeatureStats,
    noisy_mag: &Frames,
) -> Result<Frames> {
    let bins = noisy_mag.bins();
    let ctx = model.context();
    let std_frames: Vec<f32> = standardize(noisy_mag, input_stats)?
        .as_slice()
        .iter()
        .map(|&v| v as f32)
        .collect();
    let n = noisy_mag.n_frames();
    let mut out = Frames::zeros(n, bins);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let mut x = Tensor::zeros(bins, ctx, end - start);
        for t in start..end {
            fill_window(&std_frames, bins, t, ctx, x.batch_slice_mut(t - start));
        }
        let y = model.map(&x)?;
        if y.shape() != [bins, 1, end - start] {
            return Err(Error::shape(format!("model produced {:?} for {} frames", y.shape(), end - start)));
        }
        for t in start..end {
            let row = out.row_mut(t);
            for (f, v) in y.batch_slice(t - start).iter().enumerate() {
                row[f] = f64::from(*v) * target_stats.std[f] + target_stats.mean[f];
            }
        }
    }
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("enhanced magnitude".into()));
    }
    Ok(out)
}

/// Resamples to 8 kHz, zero-pads to the frame grid, maps the magnitudes,
/// resynthesizes with the noisy phase and crops back to the 8 kHz length.
pub fn denoise<M: SpectralMap + ?Sized>(
    model: &M,
    input_stats: &FeatureStats,
    target_stats: &FeatureStats,
    noisy: &Waveform,
) -> Result<Waveform> {
    let w = resample_to_8k(noisy)?;
    if w.is_empty() {
        return Err(Error::Invalid("empty input".into()));
    }
    let cfg = StftConfig::default();
    let mut samples = w.samples.clone();
    samples.resize(padded_len(w.len(), &cfg), 0.0);
    let spec = stft(&Waveform::new(samples, w.sample_rate), &cfg)?;
    let mag = enhance_magnitude(model, input_stats, target_stats, &spec.magnitude)?;
    let mut out = istft(&mag, &spec.phase, &cfg)?;
    out.truncate(w.len());
    Ok(Waveform::new(out, w.sample_rate))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dsp::StatsKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Returns the newest input frame unchanged.
    pub(crate) struct Identity(pub usize);

    impl SpectralMap for Identity {
        fn context(&self) -> usize {
            self.0
        }

        fn map(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
            let last = x.channels() - 1;
            Ok(Tensor::from_fn(x.freq(), 1, x.batch(), |f, _, b| x.at(f, last, b)))
        }
    }

    pub(crate) fn unit_stats(kind: StatsKind) -> FeatureStats {
        FeatureStats {
            mean: vec![0.0; 129],
            std: vec![1.0; 129],
            kind,
        }
    }

    #[test]
    fn padding_grid() {
        let c = StftConfig::default();
        assert_eq!(padded_len(1, &c), 256);
        assert_eq!(padded_len(256, &c), 256);
        assert_eq!(padded_len(257, &c), 320);
        assert_eq!(padded_len(320, &c), 320);
        for len in 1..2000 {
            let p = padded_len(len, &c);
            assert!(p >= len && p - len < 256 && (p - 256).is_multiple_of(64));
        }
    }

    #[test]
    fn identity_map_passes_signal_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w = Waveform::new(x, 8000);
        let out = denoise(&Identity(8), &unit_stats(StatsKind::Input), &unit_stats(StatsKind::Target), &w).unwrap();
        assert_eq!(out.len(), w.len());
        let err: f64 = out.samples.iter().zip(&w.samples).map(|(a, b)| (a - b).powi(2)).sum();
        let pow: f64 = w.samples.iter().map(|v| v * v).sum();
        assert!((err / pow).sqrt() < 1e-6, "{}", (err / pow).sqrt());
    }

    #[test]
    fn short_and_16k_inputs() {
        let w = Waveform::new(vec![0.1; 100], 8000);
        let s = (unit_stats(StatsKind::Input), unit_stats(StatsKind::Target));
        assert_eq!(denoise(&Identity(8), &s.0, &s.1, &w).unwrap().len(), 100);
        let w16 = Waveform::new(vec![0.1; 1000], 16000);
        let out = denoise(&Identity(8), &s.0, &s.1, &w16).unwrap();
        assert_eq!((out.len(), out.sample_rate), (500, 8000));
        assert!(denoise(&Identity(8), &s.0, &s.1, &Waveform::new(vec![0.1; 100], 44100)).is_err());
    }

    #[test]
    fn network_output_shape_is_checked() {
        let cfg = crate::models::NetworkConfig::preset("rced10").unwrap();
        let net = Network::<f32>::build(&cfg, 1).unwrap();
        let w = Waveform::new(vec![0.01; 700], 8000);
        let out = denoise(&net, &unit_stats(StatsKind::Input), &unit_stats(StatsKind::Target), &w).unwrap();
        assert_eq!(out.len(), 700);
    }
}
