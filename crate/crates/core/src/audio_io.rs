//! WAV ingestion and the preprocessing that happens before feature extraction.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result, WavError};

/// Mono PCM audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

const PCM_SCALE: f64 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE byte buffer holding 16-bit mono PCM at 8 or 16 kHz.
///
/// Chunks other than `fmt ` and `data` are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(WavError::NotRiff);
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(WavError::Truncated("fmt "));
                }
                let b = &bytes[body_start..body_end];
                fmt = Some((u16_at(b, 0), u16_at(b, 2), u32_at(b, 4), u16_at(b, 14)));
            }
            b"data" => {
                // Some writers leave a bogus size on streamed output; clamp to what is present.
                let end = body_end.min(bytes.len());
                data = Some(&bytes[body_start..end]);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end.saturating_add(size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or(WavError::MissingChunk("fmt "))?;
    if format != 1 {
        return Err(WavError::UnsupportedEncoding(format));
    }
    if channels != 1 {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(WavError::UnsupportedBitsPerSample(bits));
    }
    if rate != 8000 && rate != 16000 {
        return Err(WavError::UnsupportedSampleRate(rate));
    }
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE)
        .collect();
    if samples.is_empty() {
        return Err(WavError::Empty);
    }
    Ok(Waveform::new(samples, rate))
}

/// Quantizes one amplitude to 16-bit PCM, hard-clipping out-of-range values.
pub fn quantize(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    if w.samples.is_empty() {
        return Err(Error::Invalid("cannot write an empty waveform".into()));
    }
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &w.samples {
        out.extend_from_slice(&quantize(x).to_le_bytes());
    }
    Ok(out)
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const HALFBAND_TAPS: usize = 63;

/// Linear-phase low-pass used before 2:1 decimation: Hamming-windowed sinc
/// with its cutoff at a quarter of the input rate, normalized to unit DC gain.
pub fn halfband_taps() -> Vec<f64> {
    let n = HALFBAND_TAPS;
    let center = (n - 1) as f64 / 2.0;
    let cutoff = 0.25;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - center;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= dc);
    h
}

/// Brings a waveform to 8 kHz. 8 kHz input is returned unchanged; 16 kHz input
/// is low-pass filtered (zero-delay aligned) and decimated by two.
pub fn resample_to_8k(w: &Waveform) -> Result<Waveform> {
    match w.sample_rate {
        8000 => Ok(w.clone()),
        16000 => {
            let h = halfband_taps();
            let delay = (HALFBAND_TAPS - 1) / 2;
            let x = &w.samples;
            let out_len = x.len().div_ceil(2);
            let samples = (0..out_len)
                .map(|m| {
                    let center = 2 * m + delay;
                    h.iter()
                        .enumerate()
                        .filter_map(|(k, &hk)| {
                            let idx = center.checked_sub(k)?;
                            x.get(idx).map(|&v| hk * v)
                        })
                        .sum()
                })
                .collect();
            Ok(Waveform::new(samples, 8000))
        }
        other => Err(Error::Wav {
            path: Default::default(),
            source: WavError::UnsupportedSampleRate(other),
        }),
    }
}

/// Start offsets of the gating frames: a regular grid of full frames plus one
/// final frame flush with the end when the grid leaves a tail uncovered.
pub fn frame_starts(len: usize, frame_len: usize, hop: usize) -> Vec<usize> {
    if len <= frame_len {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=(len - frame_len) / hop).map(|t| t * hop).collect();
    let last = *starts.last().unwrap();
    if last + frame_len < len {
        starts.push(len - frame_len);
    }
    starts
}

pub const SILENCE_FRAME_LEN: usize = 256;
pub const SILENCE_HOP: usize = 64;
pub const SILENCE_THRESHOLD_DB: f64 = -40.0;

/// Drops samples that lie in quiet frames.
///
/// A frame is retained when its mean-square energy is above
/// `max_frame_energy * 10^(threshold_db / 10)`. A sample survives only if every
/// frame covering it is retained. All-silent input yields an empty waveform.
pub fn remove_silent_frames(
    w: &Waveform,
    frame_len: usize,
    hop: usize,
    threshold_db: f64,
) -> Waveform {
    let x = &w.samples;
    if x.is_empty() {
        return w.clone();
    }
    let frame_len = frame_len.max(1);
    let hop = hop.max(1);
    let starts = frame_starts(x.len(), frame_len, hop);
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let seg = &x[s..(s + frame_len).min(x.len())];
            seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64
        })
        .collect();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Waveform::new(Vec::new(), w.sample_rate);
    }
    let gate = max * 10f64.powf(threshold_db / 10.0);

    let mut keep = vec![true; x.len()];
    for (&s, &e) in starts.iter().zip(&energies) {
        if e <= gate {
            let end = (s + frame_len).min(x.len());
            keep[s..end].iter_mut().for_each(|k| *k = false);
        }
    }
    let samples = x
        .iter()
        .zip(&keep)
        .filter_map(|(&v, &k)| k.then_some(v))
        .collect();
    Waveform::new(samples, w.sample_rate)
}

/// [`remove_silent_frames`] with the default STFT-matched geometry and -40 dB gate.
pub fn remove_silence(w: &Waveform) -> Waveform {
    remove_silent_frames(w, SILENCE_FRAME_LEN, SILENCE_HOP, SILENCE_THRESHOLD_DB)
}
