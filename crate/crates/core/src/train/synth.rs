//! Deterministic speech-like corpus: harmonic "voices" with gliding pitches
//! and syllabic amplitude modulation, mixed against babble plus pink noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Manifest, ManifestEntry, DEFAULT_SPLIT};
use crate::audio_io::{write_wav, Waveform};
use crate::error::{Error, Result};

pub const UTTERANCE_SECS: f64 = 4.0;
pub const NOISE_CLIPS: usize = 8;
pub const NOISE_SECS: f64 = 12.0;
pub const BABBLE_VOICES: usize = 8;
const RATE: u32 = 8000;
const PEAK: f64 = 0.5;

const TABLE_LEN: usize = 4096;
const TOP_HARMONIC_HZ: f64 = 3800.0;

/// One harmonic complex: every partial of a pitch gliding between two values
/// in 100-300 Hz up to 3.8 kHz, with roughly `1/k` amplitudes. Rendered from a
/// one-period wavetable.
fn harmonic_complex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let fs = f64::from(RATE);
    let (f_start, f_end): (f64, f64) = (rng.gen_range(100.0..300.0), rng.gen_range(100.0..300.0));
    let partials = (TOP_HARMONIC_HZ / f_start.max(f_end)).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=partials).map(|k| rng.gen_range(0.5..1.0) / k as f64).collect();
    let phases: Vec<f64> = (0..partials).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let table: Vec<f64> = (0..=TABLE_LEN)
        .map(|j| {
            let u = 2.0 * PI * j as f64 / TABLE_LEN as f64;
            amps.iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * ((k + 1) as f64 * u + p).sin())
                .sum()
        })
        .collect();
    let mut cycles = rng.gen_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let f0 = f_start + (f_end - f_start) * i as f64 / n.max(1) as f64;
            cycles = (cycles + f0 / fs).fract();
            let pos = cycles * TABLE_LEN as f64;
            let j = pos as usize;
            let w = pos - j as f64;
            table[j] * (1.0 - w) + table[j + 1] * w
        })
        .collect()
}

/// A speech-like source: 3-5 harmonic complexes under a shared 4-8 Hz
/// envelope `0.6 + 0.4 sin` that never drops below 0.2.
pub fn voice<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let fs = f64::from(RATE);
    let tones = rng.gen_range(3..=5);
    let mut out = vec![0.0; n];
    for _ in 0..tones {
        out.iter_mut().zip(harmonic_complex(n, rng)).for_each(|(o, v)| *o += v);
    }
    let am_rate = rng.gen_range(4.0..8.0);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        *o *= 0.6 + 0.4 * (2.0 * PI * am_rate * i as f64 / fs + am_phase).sin();
    }
    out
}

/// Pink noise from uniform white noise (Kellett's refined filter).
pub fn pink<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Babble of [`BABBLE_VOICES`] voices plus pink noise at equal RMS.
pub fn babble<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..BABBLE_VOICES {
        out.iter_mut().zip(voice(n, rng)).for_each(|(o, v)| *o += v);
    }
    let p = pink(n, rng);
    let scale = rms(&out) / rms(&p);
    out.iter_mut().zip(p).for_each(|(o, v)| *o += scale * v);
    out
}

/// Writes `ceil(seconds / 4)` clean utterances and 8 noise clips as 8 kHz WAV
/// files into `out_dir`, plus `manifest.txt` pairing utterance `i` with clip
/// `i mod 8` at 0 dB. Returns the manifest path.
pub fn synth_corpus(seconds: f64, seed: u64, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::Invalid("empty corpus: seconds must be positive".into()));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_utt = (seconds / UTTERANCE_SECS).ceil() as usize;
    let utt_len = (UTTERANCE_SECS * f64::from(RATE)) as usize;
    let noise_len = (NOISE_SECS * f64::from(RATE)) as usize;

    for k in 0..NOISE_CLIPS {
        let mut x = babble(noise_len, &mut rng);
        normalize_peak(&mut x);
        write_wav(&Waveform::new(x, RATE), dir.join(format!("noise_{k}.wav")))?;
    }
    let mut entries = Vec::with_capacity(n_utt);
    for i in 0..n_utt {
        let mut x = voice(utt_len, &mut rng);
        normalize_peak(&mut x);
        let name = format!("clean_{i:04}.wav");
        write_wav(&Waveform::new(x, RATE), dir.join(&name))?;
        entries.push(ManifestEntry {
            clean: PathBuf::from(name),
            noise: PathBuf::from(format!("noise_{}.wav", i % NOISE_CLIPS)),
            snr_db: 0.0,
        });
    }
    let path = dir.join("manifest.txt");
    Manifest::new(entries, DEFAULT_SPLIT, seed).save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{read_wav, remove_silence};
    use crate::train::dataset::{measured_snr_db, prepare_pair};

    #[test]
    fn deterministic_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = synth_corpus(10.0, 7, a.path()).unwrap();
        synth_corpus(10.0, 7, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), NOISE_CLIPS + 3 + 1);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
        let m = Manifest::load(ma).unwrap();
        assert_eq!((m.entries.len(), m.seed, m.split), (3, 7, 0.2));
    }

    #[test]
    fn clean_survives_silence_gate() {
        let d = tempfile::tempdir().unwrap();
        let m = Manifest::load(synth_corpus(8.0, 3, d.path()).unwrap()).unwrap();
        for e in &m.entries {
            let w = read_wav(&e.clean).unwrap();
            assert_eq!(remove_silence(&w), w);
        }
    }

    #[test]
    fn generated_pairs_mix_at_zero_db() {
        let d = tempfile::tempdir().unwrap();
        let m = Manifest::load(synth_corpus(12.0, 5, d.path()).unwrap()).unwrap();
        for (i, e) in m.entries.iter().enumerate() {
            let (clean, noisy) = prepare_pair(e, i, m.seed).unwrap();
            assert!(measured_snr_db(&clean, &noisy).abs() < 1e-9);
        }
    }

    #[test]
    fn voice_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = voice(32000, &mut rng);
        assert!(x.iter().all(|v| v.is_finite()));
        let frame_rms: Vec<f64> = x.chunks(256).map(rms).collect();
        let (lo, hi) = frame_rms.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(20.0 * (lo / hi).log10() > -30.0);
    }

    #[test]
    fn zero_seconds_is_empty_corpus() {
        let d = tempfile::tempdir().unwrap();
        let e = synth_corpus(0.0, 1, d.path()).unwrap_err();
        assert!(e.to_string().contains("empty corpus"));
    }
}
