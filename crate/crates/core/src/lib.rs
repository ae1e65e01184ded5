//! Fully convolutional speech enhancement.
//!
//! The crate learns a mapping from a short history of noisy STFT magnitude
//! frames (129 bins x 8 frames at 8 kHz) to the current clean,
//! phase-aware magnitude frame, and reconstructs audio with the noisy phase.
//!
//! Layout:
//!
//! - [`audio_io`]: 16-bit PCM WAV I/O, 16 kHz to 8 kHz decimation, silence gating.
//! - [`dsp`]: STFT / overlap-add ISTFT, phase-aware targets, per-bin standardization,
//!   input windowing.
//! - [`nn`]: dense tensors and hand-written forward/backward kernels
//!   (1-D convolution along frequency, batch norm, ReLU, pooling, upsampling,
//!   fully connected) plus a finite-difference gradient checker.
//! - [`models`]: declarative network configs (CED, R-CED, CR-CED, FNN presets),
//!   network assembly with additive skip connections, parameter counting.
//! - [`train`]: SNR mixing, dataset assembly, synthetic corpus generation,
//!   Adam, plateau learning-rate ladder and the training loop.
//! - [`metrics`]: SDR and corpus evaluation.
//! - [`enhance`]: the end-to-end denoising pipeline.
//! - [`model_file`]: the binary model format.

pub mod audio_io;
pub mod dsp;
pub mod enhance;
mod error;
pub mod metrics;
pub mod model_file;
pub mod models;
pub mod nn;
pub mod train;

pub use audio_io::Waveform;
pub use dsp::{FeatureStats, Spectrogram, StftConfig};
pub use error::{Error, Result, WavError};
pub use model_file::ModelFile;
pub use models::{Network, NetworkConfig, ParamCount};
pub use nn::{Real, Tensor};

/// Number of noisy frames stacked into one network input.
pub const CONTEXT_FRAMES: usize = 8;
/// One-sided spectrum size for a 256-point FFT.
pub const BINS: usize = 129;
/// Working sample rate.
pub const SAMPLE_RATE: u32 = 8000;
