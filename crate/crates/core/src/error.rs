use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failures while decoding or encoding a WAV file.
#[derive(Debug, Error)]
pub enum WavError {
    #[error("missing RIFF header")]
    NotRiff,
    #[error("RIFF form type is not WAVE")]
    NotWave,
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("truncated `{0}` chunk")]
    Truncated(&'static str),
    #[error("unsupported audio format code {0} (only PCM = 1)")]
    UnsupportedEncoding(u16),
    #[error("unsupported channel count {0} (only mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported bits per sample {0} (only 16)")]
    UnsupportedBitsPerSample(u16),
    #[error("unsupported sample rate {0} Hz (only 8000 or 16000)")]
    UnsupportedSampleRate(u32),
    #[error("no audio samples")]
    Empty,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid model file: {0}")]
    ModelFile(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("entry {index}: {source}")]
    Entry {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Strips `Entry` wrappers and returns the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Entry { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
